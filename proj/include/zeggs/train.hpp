#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "zeggs/cache.hpp"
#include "zeggs/model.hpp"

namespace zeggs::checkpoint {
struct CheckpointData;
}

namespace zeggs::train {

struct TrainingConfig {
    std::uint64_t seed = 1234;
    double lr = 1e-4;
    double lr_decay = 0.995;
    std::int64_t lr_decay_every = 1000;
    int batch_size = 32;
    std::int64_t max_iters = 120000;
    int target_frames = 256;  // T
    int style_min = 256;      // style window length bounds (M)
    int style_max = 512;
    double speed_aug = 0.1;  // whole-batch speed factor drawn in [1-s, 1+s]
    model::LossWeights lambda;
    double kl_center = 20000;  // sigmoid annealing midpoint (iterations)
    double kl_width = 4000;
    double grad_clip = 10.0;
    std::int64_t checkpoint_every = 10000;
    std::int64_t log_every = 10;
    int threads = 0;  // 0 = hardware concurrency

    void validate() const;
    std::string to_json() const;
    static TrainingConfig from_json(const std::string& text);
};

double lr_at(const TrainingConfig& cfg, std::int64_t iter);
// Sigmoid ramp from ~0 to 1 centered at kl_center with width kl_width.
double kl_weight_at(const TrainingConfig& cfg, std::int64_t iter);

// ---------------------------------------------------------------------------
// Rectified Adam (variance rectification with plain-momentum fallback while
// rho_t <= 4).

template <typename T>
class RAdam {
public:
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::int64_t step_count = 0;

    struct Slot {
        std::vector<T> m, v;
    };
    std::vector<Slot> slots;

    void init(const tc::ParameterSet<T>& params);
    // Consumes the gradients stored on the parameters. Returns false (and
    // leaves everything untouched) when any gradient is non-finite.
    bool step(tc::ParameterSet<T>& params, double lr);

    static double rho_at(std::int64_t t, double beta2);
};

// ---------------------------------------------------------------------------
// Batch sampling

struct TrainItem {
    FeatureMatrix speech;          // [T, 81]
    FeatureMatrix target;          // [T, D_y]
    FeatureMatrix style;           // [M, D_a]
    std::vector<double> init_pose; // [D_y] frame preceding the target window
    geom::Vec2 facing;
    std::string clip_id;
    // window bookkeeping (augmented frame indices), used by property tests
    int target_start = 0;
    int style_start = 0;
    int augmented_frames = 0;
};

struct Batch {
    double speed = 1.0;
    std::vector<TrainItem> items;
};

class BatchSampler {
public:
    BatchSampler(const DatasetCache& cache, const TrainingConfig& cfg);
    const std::vector<int>& eligible() const { return eligible_; }
    Batch sample(std::int64_t iter) const;

private:
    const DatasetCache* cache_;
    TrainingConfig cfg_;
    std::vector<int> eligible_;
};

// Materializes the time-scaled poses of clip frames [first, last] and
// extracts features; shared by the sampler and tests.
MotionClip materialize_window(const CachedClip& clip, double speed, int first, int last);

// ---------------------------------------------------------------------------

class Trainer {
public:
    Trainer(const model::ModelConfig& mcfg, const TrainingConfig& tcfg, DatasetCache cache);
    // Resume from a checkpoint (restores parameters, optimizer and iteration).
    Trainer(const std::string& checkpoint_path, DatasetCache cache);

    model::LossTerms train_step();
    // Runs until `total_iters`; writes metrics.csv and periodic checkpoints
    // into out_dir when non-empty.
    void run(std::int64_t total_iters, const std::string& out_dir);

    std::int64_t iteration() const { return iter_; }
    model::GestureModel<float>& model() { return master_; }
    const model::GestureModel<float>& model() const { return master_; }
    const TrainingConfig& config() const { return tcfg_; }
    const DatasetCache& cache() const { return cache_; }

    void save_checkpoint(const std::string& path) const;

private:
    Trainer(const checkpoint::CheckpointData& data, DatasetCache cache);

    TrainingConfig tcfg_;
    DatasetCache cache_;
    model::GestureModel<float> master_;
    BatchSampler sampler_;
    RAdam<float> opt_;
    std::int64_t iter_ = 0;
    std::vector<std::unique_ptr<model::GestureModel<float>>> replicas_;

    int worker_count() const;
    model::LossTerms run_batch(const Batch& batch, double beta);
};

}  // namespace zeggs::train
