#pragma once

#include <string>
#include <utility>
#include <vector>

#include "zeggs/model.hpp"
#include "zeggs/train.hpp"

namespace zeggs::checkpoint {

struct OptimizerBlob {
    std::int64_t step_count = 0;
    std::vector<std::vector<float>> m, v;  // per parameter, in parameter order
};

// "ZEGC" container: config JSON, skeleton, normalization statistics, named
// little-endian parameter blobs, training iteration and (optionally) the
// optimizer state.
struct CheckpointData {
    model::ModelConfig model_cfg;
    train::TrainingConfig train_cfg;
    Skeleton skeleton;
    double fps = 60.0;
    NormalizationStats stats;
    std::int64_t iteration = 0;
    std::vector<std::pair<std::string, std::vector<float>>> parameters;
    bool has_optimizer = false;
    OptimizerBlob optimizer;

    std::int64_t parameter_count() const;
};

void save(const std::string& path, const model::GestureModel<float>& m,
          const train::TrainingConfig& tcfg, const Skeleton& skeleton, double fps,
          std::int64_t iteration, const train::RAdam<float>* opt = nullptr);

CheckpointData load(const std::string& path);

// Rebuilds a model and assigns the checkpoint's parameter values by name.
model::GestureModel<float> build_model(const CheckpointData& data);

}  // namespace zeggs::checkpoint
