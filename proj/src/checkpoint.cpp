#include "zeggs/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "zeggs/binio.hpp"

namespace zeggs::checkpoint {

using nlohmann::json;

std::int64_t CheckpointData::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, blob] : parameters) n += std::int64_t(blob.size());
    return n;
}

void save(const std::string& path, const model::GestureModel<float>& m,
          const train::TrainingConfig& tcfg, const Skeleton& skeleton, double fps,
          std::int64_t iteration, const train::RAdam<float>* opt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(Errc::io, "cannot write checkpoint: " + path);
    os.write("ZEGC", 4);
    binio::write_le<std::uint32_t>(os, 1);  // version
    json cfg;
    cfg["model"] = json::parse(m.cfg.to_json());
    cfg["train"] = json::parse(tcfg.to_json());
    binio::write_string(os, cfg.dump());
    write_skeleton(os, skeleton);
    binio::write_le<double>(os, fps);
    motion::write_normalization(os, m.stats);
    binio::write_le<std::int64_t>(os, iteration);
    binio::write_le<std::uint32_t>(os, std::uint32_t(m.params.count()));
    for (const auto& p : m.params.items()) {
        binio::write_string(os, p.name);
        binio::write_le<std::uint8_t>(os, 0);  // dtype f32
        const auto& shape = p.tensor.shape();
        binio::write_le<std::uint32_t>(os, std::uint32_t(shape.size()));
        for (int d : shape) binio::write_le<std::uint32_t>(os, std::uint32_t(d));
        binio::write_le<std::uint64_t>(os, std::uint64_t(p.tensor.size()));
        for (float v : p.tensor.value()) binio::write_le<float>(os, v);
    }
    binio::write_le<std::uint8_t>(os, opt ? 1 : 0);
    if (opt) {
        binio::write_le<std::int64_t>(os, opt->step_count);
        for (const auto& slot : opt->slots) {
            binio::write_le<std::uint64_t>(os, std::uint64_t(slot.m.size()));
            for (float v : slot.m) binio::write_le<float>(os, v);
            for (float v : slot.v) binio::write_le<float>(os, v);
        }
    }
}

CheckpointData load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(Errc::io, "cannot open checkpoint: " + path);
    binio::expect_magic(is, "ZEGC", "checkpoint");
    auto version = binio::read_le<std::uint32_t>(is);
    if (version != 1)
        fail(Errc::format, "checkpoint: unsupported version " + std::to_string(version));
    CheckpointData data;
    std::string cfg_text = binio::read_string(is);
    json cfg;
    try {
        cfg = json::parse(cfg_text);
    } catch (const std::exception& e) {
        fail(Errc::format, std::string("checkpoint config JSON: ") + e.what());
    }
    data.model_cfg = model::ModelConfig::from_json(cfg.at("model").dump());
    data.train_cfg = train::TrainingConfig::from_json(cfg.at("train").dump());
    data.skeleton = read_skeleton(is);
    data.skeleton.validate();
    data.fps = binio::read_le<double>(is);
    data.stats = motion::read_normalization(is);
    data.iteration = binio::read_le<std::int64_t>(is);
    auto nparams = binio::read_le<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < nparams; ++i) {
        std::string name = binio::read_string(is);
        auto dtype = binio::read_le<std::uint8_t>(is);
        if (dtype != 0) fail(Errc::format, "checkpoint: unsupported dtype for " + name);
        auto ndims = binio::read_le<std::uint32_t>(is);
        for (std::uint32_t d = 0; d < ndims; ++d) (void)binio::read_le<std::uint32_t>(is);
        auto count = binio::read_le<std::uint64_t>(is);
        std::vector<float> blob(count);
        for (auto& v : blob) v = binio::read_le<float>(is);
        data.parameters.emplace_back(std::move(name), std::move(blob));
    }
    data.has_optimizer = binio::read_le<std::uint8_t>(is) != 0;
    if (data.has_optimizer) {
        data.optimizer.step_count = binio::read_le<std::int64_t>(is);
        for (std::uint32_t i = 0; i < nparams; ++i) {
            auto count = binio::read_le<std::uint64_t>(is);
            std::vector<float> m(count), v(count);
            for (auto& x : m) x = binio::read_le<float>(is);
            for (auto& x : v) x = binio::read_le<float>(is);
            data.optimizer.m.push_back(std::move(m));
            data.optimizer.v.push_back(std::move(v));
        }
    }
    return data;
}

model::GestureModel<float> build_model(const CheckpointData& data) {
    model::GestureModel<float> m(data.model_cfg, data.stats, data.train_cfg.seed);
    if (data.parameters.size() != m.params.count())
        fail(Errc::format, "checkpoint: parameter count mismatch");
    for (std::size_t i = 0; i < data.parameters.size(); ++i) {
        const auto& [name, blob] = data.parameters[i];
        const auto& p = m.params.items()[i];
        if (p.name != name)
            fail(Errc::format, "checkpoint: parameter order mismatch at \"" + name + "\"");
        if (std::size_t(p.tensor.size()) != blob.size())
            fail(Errc::format, "checkpoint: size mismatch for \"" + name + "\"");
        std::copy(blob.begin(), blob.end(), p.tensor.value().begin());
    }
    return m;
}

}  // namespace zeggs::checkpoint
