#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "zeggs/audio.hpp"
#include "zeggs/bvh.hpp"
#include "zeggs/cache.hpp"
#include "zeggs/checkpoint.hpp"
#include "zeggs/style_space.hpp"
#include "zeggs/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace zeggs;

namespace {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::io, "cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct FullConfig {
    model::ModelConfig model;
    train::TrainingConfig train;
};

FullConfig load_full_config(const std::string& path) {
    json doc;
    try {
        doc = json::parse(read_text_file(path));
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        fail(Errc::format, std::string("config JSON: ") + e.what());
    }
    for (auto it = doc.begin(); it != doc.end(); ++it)
        if (it.key() != "model" && it.key() != "train")
            fail(Errc::config, "config: unknown section \"" + it.key() + "\"");
    FullConfig cfg;
    if (doc.contains("model")) cfg.model = model::ModelConfig::from_json(doc["model"].dump());
    if (doc.contains("train")) cfg.train = train::TrainingConfig::from_json(doc["train"].dump());
    return cfg;
}

std::uint64_t ensure_seed(std::uint64_t seed, bool seed_given) {
    if (seed_given) return seed;
    std::random_device rd;
    std::uint64_t s = (std::uint64_t(rd()) << 32) ^ rd();
    std::cout << "seed: " << s << "\n";
    return s;
}

geom::Vec2 parse_facing(const std::string& text) {
    auto comma = text.find(',');
    if (comma == std::string::npos) fail(Errc::args, "--facing expects \"x,z\"");
    try {
        geom::Vec2 f{std::stod(text.substr(0, comma)), std::stod(text.substr(comma + 1))};
        return f.normalized();
    } catch (const Error&) {
        throw;
    } catch (...) {
        fail(Errc::args, "--facing expects two numbers \"x,z\"");
    }
}

int cmd_prepare(const std::string& manifest_path, const std::string& out_path,
                const std::string& report_path) {
    Manifest manifest = load_manifest(manifest_path);
    std::string base = fs::path(manifest_path).parent_path().string();
    PrepareReport report;
    DatasetCache cache = prepare_dataset(manifest, base, &report);
    cache.save(out_path);
    std::cout << report.to_text();
    std::cout << "cache written: " << out_path << "\n";
    if (!report_path.empty()) {
        std::ofstream os(report_path);
        if (!os) fail(Errc::io, "cannot write report: " + report_path);
        os << report.to_json();
    }
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& cache_path,
              const std::string& out_dir, const std::string& resume_path, std::int64_t iters) {
    DatasetCache cache = DatasetCache::load(cache_path);
    std::unique_ptr<train::Trainer> trainer;
    if (!resume_path.empty()) {
        trainer = std::make_unique<train::Trainer>(resume_path, std::move(cache));
    } else {
        if (config_path.empty()) fail(Errc::args, "train: --config is required unless resuming");
        FullConfig cfg = load_full_config(config_path);
        cfg.model.joints = cache.joints();
        trainer = std::make_unique<train::Trainer>(cfg.model, cfg.train, std::move(cache));
    }
    std::int64_t total = iters > 0 ? iters : trainer->config().max_iters;
    trainer->run(total, out_dir);
    std::cout << "trained to iteration " << trainer->iteration() << ", outputs in " << out_dir
              << "\n";
    return 0;
}

// Style source grammar:
//   <path>.bvh                 zero-shot from a motion clip
//   <id>                       stored embedding id (requires --embeddings)
//   <id>:<w>,<id>:<w>,...      blend of stored embeddings (weights sum to 1)
//   pca:<id>:<comp>:<delta>:<style>   PCA edit (requires --embeddings and --pca)
std::vector<double> resolve_style_embedding(const std::string& spec,
                                            const std::string& embeddings_path,
                                            const std::string& pca_path,
                                            const model::GestureModel<float>& net,
                                            const Skeleton& skeleton,
                                            FeatureMatrix* style_matrix_out,
                                            std::vector<double>* init_pose_out) {
    if (spec.size() > 4 && spec.substr(spec.size() - 4) == ".bvh") {
        MotionClip clip = motion::read_bvh_file(spec);
        if (!clip.skeleton->same_structure(skeleton))
            fail(Errc::format, "style clip skeleton does not match the checkpoint skeleton");
        // Reuse checkpoint metadata (joint names may carry different tags).
        *clip.skeleton = skeleton;
        *style_matrix_out = motion::extract_style_features(clip);
        FeatureMatrix states = motion::extract_pose_states(clip);
        init_pose_out->assign(states.row(0), states.row(0) + states.cols);
        return {};  // embedding comes from the style encoder
    }
    if (spec.rfind("pca:", 0) == 0) {
        if (embeddings_path.empty() || pca_path.empty())
            fail(Errc::args, "PCA edit spec requires --embeddings and --pca");
        std::stringstream ss(spec.substr(4));
        std::string id, comp, delta, style;
        if (!std::getline(ss, id, ':') || !std::getline(ss, comp, ':') ||
            !std::getline(ss, delta, ':') || !std::getline(ss, style, ':'))
            fail(Errc::args, "PCA edit spec is pca:<id>:<component>:<delta>:<style>");
        auto set = style_space::EmbeddingSet::load_csv(embeddings_path);
        const auto* row = set.find(id);
        if (!row) fail(Errc::args, "unknown embedding id \"" + id + "\"");
        auto model = style_space::PcaModel::load_json(pca_path);
        return style_space::pca_edit(row->mu, model, std::stoi(comp), std::stod(delta), style);
    }
    if (spec.find(':') != std::string::npos) {
        if (embeddings_path.empty()) fail(Errc::args, "blend spec requires --embeddings");
        auto set = style_space::EmbeddingSet::load_csv(embeddings_path);
        std::vector<std::vector<double>> es;
        std::vector<double> ws;
        std::stringstream ss(spec);
        std::string part;
        while (std::getline(ss, part, ',')) {
            auto colon = part.rfind(':');
            if (colon == std::string::npos) fail(Errc::args, "blend spec is id:w,id:w,...");
            std::string id = part.substr(0, colon);
            const auto* row = set.find(id);
            if (!row) fail(Errc::args, "unknown embedding id \"" + id + "\"");
            es.push_back(row->mu);
            try {
                ws.push_back(std::stod(part.substr(colon + 1)));
            } catch (...) {
                fail(Errc::args, "blend spec: bad weight in \"" + part + "\"");
            }
        }
        return style_space::blend(es, ws);
    }
    if (embeddings_path.empty())
        fail(Errc::args, "style source \"" + spec +
                             "\" is not a .bvh file; stored ids require --embeddings");
    auto set = style_space::EmbeddingSet::load_csv(embeddings_path);
    const auto* row = set.find(spec);
    if (!row) fail(Errc::args, "unknown embedding id \"" + spec + "\"");
    (void)net;
    return row->mu;
}

int cmd_generate(const std::string& ckpt_path, const std::string& audio_path,
                 const std::string& style_spec, const std::string& out_path, bool deterministic,
                 std::uint64_t seed, bool seed_given, int frames, const std::string& facing_text,
                 const std::string& embeddings_path, const std::string& pca_path,
                 const std::string& init_pose_path) {
    auto data = checkpoint::load(ckpt_path);
    auto net = checkpoint::build_model(data);
    auto skeleton = std::make_shared<Skeleton>(data.skeleton);

    audio::Waveform wav = audio::read_wav_file(audio_path);
    FeatureMatrix speech = audio::speech_features(wav);
    int available = speech.rows;
    int want = frames > 0 ? std::min(frames, available) : available;
    if (want < 1) fail(Errc::args, "audio too short to generate any frames");

    geom::Vec2 facing{0, 1};
    if (!facing_text.empty()) facing = parse_facing(facing_text);

    FeatureMatrix style_matrix;
    std::vector<double> init_pose;
    std::vector<double> embedding = resolve_style_embedding(
        style_spec, embeddings_path, pca_path, net, data.skeleton, &style_matrix, &init_pose);

    if (!init_pose_path.empty()) {
        MotionClip pose_clip = motion::read_bvh_file(init_pose_path);
        if (!pose_clip.skeleton->same_structure(data.skeleton))
            fail(Errc::format, "--init-pose skeleton does not match the checkpoint skeleton");
        *pose_clip.skeleton = data.skeleton;
        FeatureMatrix states = motion::extract_pose_states(pose_clip);
        init_pose.assign(states.row(0), states.row(0) + states.cols);
    }
    if (init_pose.empty()) {
        // Rest pose (two identical frames so velocities are defined).
        MotionClip rest;
        rest.skeleton = skeleton;
        rest.fps = data.fps;
        rest.poses = {SkeletonPose::rest(data.skeleton), SkeletonPose::rest(data.skeleton)};
        FeatureMatrix states = motion::extract_pose_states(rest);
        init_pose.assign(states.row(0), states.row(0) + states.cols);
    }

    std::uint64_t use_seed = ensure_seed(seed, seed_given || deterministic);
    RngStream rng = RngStream::derive(use_seed, {kRngEmbedding});

    FeatureMatrix states;
    if (!embedding.empty()) {
        states = net.generate_with_embedding(speech, embedding, init_pose, facing, want, data.fps);
    } else {
        states = net.generate(speech, style_matrix, init_pose, facing, want, data.fps,
                              deterministic, rng);
    }
    MotionClip out_clip = motion::pose_states_to_clip(states, skeleton, data.fps);
    motion::write_bvh_file(out_clip, out_path);
    std::cout << "wrote " << out_clip.frame_count() << " frames to " << out_path << "\n";
    return 0;
}

int cmd_encode_style(const std::string& ckpt_path, const std::string& cache_path,
                     const std::string& out_path, int window_frames, const std::string& split) {
    auto data = checkpoint::load(ckpt_path);
    auto net = checkpoint::build_model(data);
    DatasetCache cache = DatasetCache::load(cache_path);
    if (!cache.skeleton.same_structure(data.skeleton))
        fail(Errc::format, "cache skeleton does not match the checkpoint skeleton");
    style_space::EmbeddingSet set;
    RngStream unused(0);
    for (const auto& clip : cache.clips) {
        if (split == "train" && !clip.train_split) continue;
        if (split == "heldout" && clip.train_split) continue;
        FeatureMatrix feats = motion::extract_style_features(clip.clip);
        int windows = std::max(1, feats.rows / window_frames);
        for (int w = 0; w < windows; ++w) {
            int start = w * window_frames;
            int len = std::min(window_frames, feats.rows - start);
            if (len < 2) continue;
            FeatureMatrix window(len, feats.cols);
            for (int f = 0; f < len; ++f)
                std::copy_n(feats.row(start + f), feats.cols, window.row(f));
            tc::Tape<float> tape(false);
            auto [mu, logvar] = net.style_encode(tape, net.normalized_style(window), false, unused);
            style_space::EmbeddingRow row;
            row.id = clip.id + "#" + std::to_string(w);
            row.label = clip.style;
            row.mu.assign(mu.value().begin(), mu.value().end());
            set.add(std::move(row));
        }
    }
    set.save_csv(out_path);
    std::cout << "wrote " << set.rows.size() << " embeddings to " << out_path << "\n";
    return 0;
}

int cmd_pca_fit(const std::string& embeddings_path, const std::string& out_path, int k,
                const std::string& scatter_path) {
    auto set = style_space::EmbeddingSet::load_csv(embeddings_path);
    auto model = style_space::pca_fit(set, k);
    model.save_json(out_path);
    std::cout << "PCA with " << k << " components written to " << out_path << "\n";
    if (!scatter_path.empty()) {
        std::ofstream os(scatter_path);
        if (!os) fail(Errc::io, "cannot write scatter CSV: " + scatter_path);
        os << style_space::scatter_csv(set, model);
    }
    return 0;
}

int cmd_pca_edit(const std::string& embeddings_path, const std::string& pca_path,
                 const std::string& id, int component, double delta, const std::string& style,
                 const std::string& out_path) {
    auto set = style_space::EmbeddingSet::load_csv(embeddings_path);
    const auto* row = set.find(id);
    if (!row) fail(Errc::args, "unknown embedding id \"" + id + "\"");
    auto model = style_space::PcaModel::load_json(pca_path);
    auto edited = style_space::pca_edit(row->mu, model, component, delta, style);
    if (!out_path.empty()) {
        style_space::EmbeddingSet out;
        style_space::EmbeddingRow r;
        r.id = id + "#edit";
        r.label = row->label;
        r.mu = edited;
        out.add(std::move(r));
        out.save_csv(out_path);
    } else {
        char buf[32];
        for (std::size_t i = 0; i < edited.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.9g", edited[i]);
            std::cout << (i ? "," : "") << buf;
        }
        std::cout << "\n";
    }
    return 0;
}

int cmd_inspect(const std::string& ckpt_path, bool as_json) {
    auto data = checkpoint::load(ckpt_path);
    std::int64_t total = data.parameter_count();
    auto count_prefix = [&](const std::string& prefix) {
        std::int64_t n = 0;
        for (const auto& [name, blob] : data.parameters)
            if (name.rfind(prefix, 0) == 0) n += std::int64_t(blob.size());
        return n;
    };
    std::int64_t gru = count_prefix("decoder.gru");
    if (as_json) {
        json j;
        j["model"] = json::parse(data.model_cfg.to_json());
        j["iteration"] = data.iteration;
        j["parameters"] = total;
        j["parameters_speech"] = count_prefix("speech.");
        j["parameters_style"] = count_prefix("style.");
        j["parameters_initializer"] = count_prefix("init.");
        j["parameters_decoder"] = count_prefix("decoder.");
        j["parameters_gru"] = gru;
        j["has_optimizer"] = data.has_optimizer;
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "model config: " << data.model_cfg.to_json() << "\n";
        std::cout << "iteration: " << data.iteration << "\n";
        std::cout << "parameters: " << total << "\n";
        std::cout << "  speech encoder:  " << count_prefix("speech.") << "\n";
        std::cout << "  style encoder:   " << count_prefix("style.") << "\n";
        std::cout << "  state init:      " << count_prefix("init.") << "\n";
        std::cout << "  decoder:         " << count_prefix("decoder.") << "\n";
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * double(gru) / double(total));
        std::cout << "  GRU share:       " << buf << "%\n";
        std::cout << "optimizer state: " << (data.has_optimizer ? "yes" : "no") << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"speech-driven gesture generation with example-based style control"};
    app.require_subcommand(1);

    // prepare-data
    auto* prep = app.add_subcommand("prepare-data", "parse BVH/WAV files into a dataset cache");
    std::string manifest_path, cache_out, report_path;
    prep->add_option("--manifest", manifest_path, "manifest JSON")->required();
    prep->add_option("--out", cache_out, "output cache path (.zegm)")->required();
    prep->add_option("--report", report_path, "write a JSON report");

    // train
    auto* tr = app.add_subcommand("train", "run the training loop");
    std::string train_config, train_cache, train_out, resume_path;
    std::int64_t train_iters = 0;
    tr->add_option("--config", train_config, "config JSON with model/train sections");
    tr->add_option("--cache", train_cache, "dataset cache (.zegm)")->required();
    tr->add_option("--out", train_out, "output directory")->required();
    tr->add_option("--resume", resume_path, "checkpoint to resume from");
    tr->add_option("--iters", train_iters, "override total iterations");

    // generate
    auto* gen = app.add_subcommand("generate", "generate gesture BVH from audio and a style source");
    std::string gen_ckpt, gen_audio, gen_style, gen_out, gen_facing, gen_embeddings, gen_pca,
        gen_init_pose;
    bool gen_det = false;
    std::uint64_t gen_seed = 0;
    int gen_frames = 0;
    gen->add_option("--checkpoint", gen_ckpt, "checkpoint (.zegc)")->required();
    gen->add_option("--audio", gen_audio, "speech WAV")->required();
    gen->add_option("--style", gen_style,
                    "style source: clip.bvh | id | id:w,id:w | pca:<id>:<c>:<d>:<style>")
        ->required();
    gen->add_option("--out", gen_out, "output BVH")->required();
    gen->add_flag("--deterministic", gen_det, "use the posterior mean instead of sampling");
    auto* seed_opt = gen->add_option("--seed", gen_seed, "random seed");
    gen->add_option("--frames", gen_frames, "frame count (default: all available speech frames)");
    gen->add_option("--facing", gen_facing, "target facing direction \"x,z\" (default 0,1)");
    gen->add_option("--embeddings", gen_embeddings, "embedding store CSV (for id-based styles)");
    gen->add_option("--pca", gen_pca, "PCA model JSON (for pca: styles)");
    gen->add_option("--init-pose", gen_init_pose, "BVH whose first frame seeds the pose");

    // encode-style
    auto* enc = app.add_subcommand("encode-style", "export style embeddings for cached clips");
    std::string enc_ckpt, enc_cache, enc_out, enc_split = "all";
    int enc_window = 512;
    enc->add_option("--checkpoint", enc_ckpt, "checkpoint (.zegc)")->required();
    enc->add_option("--cache", enc_cache, "dataset cache (.zegm)")->required();
    enc->add_option("--out", enc_out, "output CSV")->required();
    enc->add_option("--window-frames", enc_window, "non-overlapping window length (default 512)");
    enc->add_option("--split", enc_split, "all|train|heldout");

    // pca-fit
    auto* pfit = app.add_subcommand("pca-fit", "fit a PCA model over stored embeddings");
    std::string pfit_embeddings, pfit_out, pfit_scatter;
    int pfit_k = 2;
    pfit->add_option("--embeddings", pfit_embeddings, "embedding store CSV")->required();
    pfit->add_option("--out", pfit_out, "output PCA JSON")->required();
    pfit->add_option("-k,--components", pfit_k, "component count (default 2)");
    pfit->add_option("--scatter", pfit_scatter, "write a pc1/pc2 scatter CSV");

    // pca-edit
    auto* pedit = app.add_subcommand("pca-edit", "edit an embedding along a principal component");
    std::string pe_embeddings, pe_pca, pe_id, pe_style, pe_out;
    int pe_component = 0;
    double pe_delta = 1.0;
    pedit->add_option("--embeddings", pe_embeddings, "embedding store CSV")->required();
    pedit->add_option("--pca", pe_pca, "PCA model JSON")->required();
    pedit->add_option("--id", pe_id, "embedding id")->required();
    pedit->add_option("--component", pe_component, "component index");
    pedit->add_option("--delta", pe_delta, "shift in style standard deviations");
    pedit->add_option("--style", pe_style, "style label for the deviation scale")->required();
    pedit->add_option("--out", pe_out, "write the edited embedding as a CSV");

    // inspect
    auto* insp = app.add_subcommand("inspect", "print checkpoint configuration and sizes");
    std::string insp_ckpt;
    bool insp_json = false;
    insp->add_option("--checkpoint", insp_ckpt, "checkpoint (.zegc)")->required();
    insp->add_flag("--json", insp_json, "machine-readable output");

    CLI11_PARSE(app, argc, argv);

    try {
        if (prep->parsed()) return cmd_prepare(manifest_path, cache_out, report_path);
        if (tr->parsed())
            return cmd_train(train_config, train_cache, train_out, resume_path, train_iters);
        if (gen->parsed())
            return cmd_generate(gen_ckpt, gen_audio, gen_style, gen_out, gen_det, gen_seed,
                                seed_opt->count() > 0, gen_frames, gen_facing, gen_embeddings,
                                gen_pca, gen_init_pose);
        if (enc->parsed()) return cmd_encode_style(enc_ckpt, enc_cache, enc_out, enc_window, enc_split);
        if (pfit->parsed()) return cmd_pca_fit(pfit_embeddings, pfit_out, pfit_k, pfit_scatter);
        if (pedit->parsed())
            return cmd_pca_edit(pe_embeddings, pe_pca, pe_id, pe_component, pe_delta, pe_style,
                                pe_out);
        if (insp->parsed()) return cmd_inspect(insp_ckpt, insp_json);
    } catch (const Error& e) {
        std::cerr << "E_" << errc_name(e.code()) << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "E_INTERNAL: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
