#include "zeggs/cache.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "zeggs/audio.hpp"
#include "zeggs/binio.hpp"
#include "zeggs/bvh.hpp"

namespace zeggs {

namespace fs = std::filesystem;
using nlohmann::json;

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::io, "cannot open manifest: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        fail(Errc::format, std::string("manifest JSON: ") + e.what());
    }
    Manifest m;
    if (doc.contains("skeleton")) {
        const json& s = doc["skeleton"];
        m.hips = s.value("hips", "");
        m.spine2 = s.value("spine2", "");
        m.head = s.value("head", "");
        if (s.contains("mirror"))
            for (const auto& pair : s["mirror"])
                m.mirror_pairs.emplace_back(pair.at(0).get<std::string>(),
                                            pair.at(1).get<std::string>());
    }
    if (!doc.contains("clips")) fail(Errc::format, "manifest: missing \"clips\" array");
    for (const auto& c : doc["clips"]) {
        ManifestEntry e;
        e.motion = c.at("motion").get<std::string>();
        e.audio = c.at("audio").get<std::string>();
        e.style = c.at("style").get<std::string>();
        e.split = c.value("split", "train");
        if (e.style.empty()) fail(Errc::format, "manifest: empty style label for " + e.motion);
        if (e.split != "train" && e.split != "heldout")
            fail(Errc::format, "manifest: split must be \"train\" or \"heldout\", got \"" + e.split +
                                   "\"");
        m.entries.push_back(std::move(e));
    }
    return m;
}

std::vector<int> DatasetCache::split_indices(bool train) const {
    std::vector<int> idx;
    for (std::size_t i = 0; i < clips.size(); ++i)
        if (clips[i].train_split == train) idx.push_back(int(i));
    return idx;
}

int DatasetCache::find_clip(const std::string& id) const {
    for (std::size_t i = 0; i < clips.size(); ++i)
        if (clips[i].id == id) return int(i);
    return -1;
}

namespace {

void write_matrix_f32(std::ostream& os, const FeatureMatrix& m) {
    binio::write_le<std::uint32_t>(os, std::uint32_t(m.rows));
    binio::write_le<std::uint32_t>(os, std::uint32_t(m.cols));
    for (double v : m.data) binio::write_le<float>(os, float(v));
}

FeatureMatrix read_matrix_f32(std::istream& is) {
    auto rows = binio::read_le<std::uint32_t>(is);
    auto cols = binio::read_le<std::uint32_t>(is);
    FeatureMatrix m(static_cast<int>(rows), static_cast<int>(cols));
    for (auto& v : m.data) v = double(binio::read_le<float>(is));
    return m;
}

}  // namespace

void DatasetCache::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(Errc::io, "cannot write cache: " + path);
    os.write("ZEGM", 4);
    binio::write_le<std::uint32_t>(os, version);
    binio::write_le<std::uint32_t>(os, std::uint32_t(skeleton.joint_count()));
    binio::write_le<double>(os, fps);
    binio::write_le<std::uint32_t>(os, std::uint32_t(dim_table.size()));
    for (const auto& d : dim_table) binio::write_string(os, d);
    write_skeleton(os, skeleton);
    motion::write_normalization(os, stats);
    binio::write_le<std::uint32_t>(os, std::uint32_t(clips.size()));
    for (const auto& c : clips) {
        binio::write_string(os, c.id);
        binio::write_string(os, c.style);
        binio::write_le<std::uint8_t>(os, c.train_split ? 1 : 0);
        binio::write_le<std::uint8_t>(os, c.mirrored ? 1 : 0);
        binio::write_le<double>(os, c.facing.x);
        binio::write_le<double>(os, c.facing.z);
        binio::write_le<double>(os, c.clip.fps);
        binio::write_le<std::uint32_t>(os, std::uint32_t(c.clip.frame_count()));
        for (const auto& pose : c.clip.poses)
            for (int ji = 0; ji < skeleton.joint_count(); ++ji) {
                const auto& t = pose.translations[std::size_t(ji)];
                const auto& q = pose.rotations[std::size_t(ji)];
                for (double v : {t.x, t.y, t.z, q.w, q.x, q.y, q.z})
                    binio::write_le<float>(os, float(v));
            }
        write_matrix_f32(os, c.speech);
    }
}

DatasetCache DatasetCache::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(Errc::io, "cannot open cache: " + path);
    binio::expect_magic(is, "ZEGM", "dataset cache");
    DatasetCache d;
    d.version = binio::read_le<std::uint32_t>(is);
    if (d.version != 1)
        fail(Errc::format, "dataset cache: unsupported version " + std::to_string(d.version));
    auto j = binio::read_le<std::uint32_t>(is);
    d.fps = binio::read_le<double>(is);
    auto ndims = binio::read_le<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < ndims; ++i) d.dim_table.push_back(binio::read_string(is));
    d.skeleton = read_skeleton(is);
    if (std::uint32_t(d.skeleton.joint_count()) != j)
        fail(Errc::format, "dataset cache: joint count mismatch");
    d.skeleton.validate();
    d.stats = motion::read_normalization(is);
    auto nclips = binio::read_le<std::uint32_t>(is);
    auto skeleton = std::make_shared<Skeleton>(d.skeleton);
    for (std::uint32_t i = 0; i < nclips; ++i) {
        CachedClip c;
        c.id = binio::read_string(is);
        c.style = binio::read_string(is);
        c.train_split = binio::read_le<std::uint8_t>(is) != 0;
        c.mirrored = binio::read_le<std::uint8_t>(is) != 0;
        c.facing.x = binio::read_le<double>(is);
        c.facing.z = binio::read_le<double>(is);
        c.clip.fps = binio::read_le<double>(is);
        c.clip.skeleton = skeleton;
        c.clip.style = c.style;
        c.clip.source = c.id;
        auto frames = binio::read_le<std::uint32_t>(is);
        c.clip.poses.resize(frames);
        for (auto& pose : c.clip.poses) {
            pose.translations.resize(j);
            pose.rotations.resize(j);
            for (std::uint32_t ji = 0; ji < j; ++ji) {
                double v[7];
                for (double& x : v) x = double(binio::read_le<float>(is));
                pose.translations[ji] = {v[0], v[1], v[2]};
                pose.rotations[ji] = geom::Quat{v[3], v[4], v[5], v[6]};
            }
        }
        c.speech = read_matrix_f32(is);
        d.clips.push_back(std::move(c));
    }
    return d;
}

std::string PrepareReport::to_text() const {
    std::ostringstream os;
    os << "style durations (minutes, original clips)\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "  %-16s %8.2f  (%d clips)\n", r.style.c_str(), r.minutes,
                      r.clips);
        os << buf;
    }
    std::snprintf(buf, sizeof(buf), "  %-16s %8.2f\n", "Total", total_minutes);
    os << buf;
    os << "styles: " << style_count << ", cached clips (with mirrored): " << clip_count << "\n";
    return os.str();
}

std::string PrepareReport::to_json() const {
    json doc;
    doc["styles"] = style_count;
    doc["clips"] = clip_count;
    doc["total_minutes"] = total_minutes;
    json table = json::array();
    for (const auto& r : rows)
        table.push_back({{"style", r.style}, {"minutes", r.minutes}, {"clips", r.clips}});
    doc["per_style"] = table;
    return doc.dump(2);
}

DatasetCache prepare_dataset(const Manifest& manifest, const std::string& base_dir,
                             PrepareReport* report) {
    if (manifest.entries.empty()) fail(Errc::config, "manifest has no clips");
    DatasetCache cache;
    bool have_skeleton = false;

    auto resolve = [&](const std::string& p) {
        fs::path fp(p);
        if (fp.is_absolute()) return fp;
        return fs::path(base_dir) / fp;
    };

    std::map<std::string, StyleReportRow> style_rows;
    for (const auto& e : manifest.entries) {
        fs::path motion_path = resolve(e.motion);
        fs::path audio_path = resolve(e.audio);
        if (!fs::exists(motion_path)) fail(Errc::io, "missing motion file: " + motion_path.string());
        if (!fs::exists(audio_path)) fail(Errc::io, "missing audio file: " + audio_path.string());

        MotionClip clip = motion::read_bvh_file(motion_path.string());
        Skeleton& skel = *clip.skeleton;
        if (!manifest.hips.empty()) skel.hips_name = manifest.hips;
        if (!manifest.spine2.empty()) skel.spine2_name = manifest.spine2;
        if (!manifest.head.empty()) skel.head_name = manifest.head;
        if (!manifest.mirror_pairs.empty()) {
            skel.mirror_map.assign(std::size_t(skel.joint_count()), -1);
            for (int i = 0; i < skel.joint_count(); ++i) skel.mirror_map[std::size_t(i)] = i;
            for (const auto& [a, b] : manifest.mirror_pairs) {
                int ia = skel.require_joint(a, "mirror pair");
                int ib = skel.require_joint(b, "mirror pair");
                skel.mirror_map[std::size_t(ia)] = ib;
                skel.mirror_map[std::size_t(ib)] = ia;
            }
        }
        skel.validate();

        if (!have_skeleton) {
            cache.skeleton = skel;
            cache.fps = clip.fps;
            have_skeleton = true;
        } else if (!cache.skeleton.same_structure(skel)) {
            fail(Errc::format, "skeleton mismatch across clips: " + motion_path.string());
        }

        audio::Waveform wav = audio::read_wav_file(audio_path.string());
        FeatureMatrix speech = audio::speech_features(wav);

        CachedClip base;
        base.id = fs::path(e.motion).stem().string();
        base.style = e.style;
        base.train_split = (e.split != "heldout");
        base.clip = clip;
        base.clip.style = e.style;
        base.speech = speech;
        base.facing = motion::compute_target_facing(clip);

        CachedClip mirrored;
        mirrored.id = base.id + "|M";
        mirrored.style = e.style;
        mirrored.train_split = base.train_split;
        mirrored.mirrored = true;
        mirrored.clip = motion::mirror_clip(clip);
        mirrored.speech = speech;
        mirrored.facing = motion::compute_target_facing(mirrored.clip);

        auto& row = style_rows[e.style];
        row.style = e.style;
        row.minutes += double(clip.frame_count()) / clip.fps / 60.0;
        row.clips += 1;

        cache.clips.push_back(std::move(base));
        cache.clips.push_back(std::move(mirrored));
    }

    // Normalization statistics over the training split (mirrored included).
    StatsAccumulator pose_acc, style_acc, speech_acc;
    for (const auto& c : cache.clips) {
        if (!c.train_split) continue;
        FeatureMatrix y = motion::extract_pose_states(c.clip);
        FeatureMatrix a = motion::extract_style_features(c.clip);
        pose_acc.add_rows(y);
        style_acc.add_rows(a);
        speech_acc.add_rows(c.speech);
    }
    cache.stats.pose = pose_acc.finish(cache.stats.sigma_floor);
    cache.stats.style = style_acc.finish(cache.stats.sigma_floor);
    cache.stats.speech = speech_acc.finish(cache.stats.sigma_floor);

    int joints = cache.skeleton.joint_count();
    cache.dim_table = {
        "pose:" + std::to_string(7 * joints) + "@" + std::to_string(int(cache.fps)) + "fps",
        "posestate:" + std::to_string(motion::pose_state_width(joints)),
        "stylefeat:" + std::to_string(motion::style_feature_width(joints)),
        "speech:81@60fps",
    };

    if (report) {
        PrepareReport r;
        for (auto& [style, row] : style_rows) {
            r.rows.push_back(row);
            r.total_minutes += row.minutes;
        }
        r.style_count = int(style_rows.size());
        r.clip_count = int(cache.clips.size());
        *report = std::move(r);
    }
    return cache;
}

}  // namespace zeggs
