#pragma once

#include <string>
#include <utility>
#include <vector>

#include "zeggs/motion.hpp"

namespace zeggs {

struct ManifestEntry {
    std::string motion;  // BVH path (relative to the manifest's directory)
    std::string audio;   // WAV path
    std::string style;
    std::string split;   // "train" (default) or "heldout"
};

struct Manifest {
    // Optional skeleton metadata overrides; inferred from joint names when empty.
    std::string hips, spine2, head;
    std::vector<std::pair<std::string, std::string>> mirror_pairs;
    std::vector<ManifestEntry> entries;
};

Manifest load_manifest(const std::string& path);

struct CachedClip {
    std::string id;
    std::string style;
    bool train_split = true;
    bool mirrored = false;
    geom::Vec2 facing{0, 1};
    MotionClip clip;
    FeatureMatrix speech;  // [frames, 81] at 60 fps
};

// Processed dataset container ("ZEGM"): skeleton, normalization statistics
// and per-clip pose + speech matrices, little-endian, 32-bit payload.
struct DatasetCache {
    std::uint32_t version = 1;
    double fps = 60.0;
    Skeleton skeleton;
    NormalizationStats stats;
    std::vector<std::string> dim_table;
    std::vector<CachedClip> clips;

    int joints() const { return skeleton.joint_count(); }
    std::vector<int> split_indices(bool train) const;
    int find_clip(const std::string& id) const;  // -1 when absent

    void save(const std::string& path) const;
    static DatasetCache load(const std::string& path);
};

struct StyleReportRow {
    std::string style;
    double minutes = 0;
    int clips = 0;
};

struct PrepareReport {
    std::vector<StyleReportRow> rows;  // original (unmirrored) clips only
    double total_minutes = 0;
    int style_count = 0;
    int clip_count = 0;  // including mirrored copies

    std::string to_text() const;
    std::string to_json() const;
};

// Parses every manifest entry, adds mirrored copies, extracts speech features,
// computes target facings and fits normalization statistics on the train split.
DatasetCache prepare_dataset(const Manifest& manifest, const std::string& base_dir,
                             PrepareReport* report = nullptr);

}  // namespace zeggs
