#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "zeggs/skeleton.hpp"

namespace zeggs {

// Row-major matrix of per-frame feature rows (64-bit; the cache stores a
// 32-bit copy for training).
struct FeatureMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    FeatureMatrix() = default;
    FeatureMatrix(int r, int c) : rows(r), cols(c), data(std::size_t(r) * std::size_t(c), 0.0) {}
    double& at(int r, int c) { return data[std::size_t(r) * cols + c]; }
    double at(int r, int c) const { return data[std::size_t(r) * cols + c]; }
    double* row(int r) { return data.data() + std::size_t(r) * cols; }
    const double* row(int r) const { return data.data() + std::size_t(r) * cols; }
};

struct MotionClip {
    std::shared_ptr<Skeleton> skeleton;
    double fps = 60.0;
    std::vector<SkeletonPose> poses;
    std::string style;   // optional label
    std::string source;  // id

    int frame_count() const { return int(poses.size()); }
};

// Per-dimension z-score statistics with a floored standard deviation.
struct FeatureStats {
    std::vector<double> mean;
    std::vector<double> stdev;

    int width() const { return int(mean.size()); }
};

struct NormalizationStats {
    FeatureStats pose;    // width 15j+13
    FeatureStats style;   // width 15j+6
    FeatureStats speech;  // width 81
    double sigma_floor = 1e-4;
};

// Deterministic order-independent accumulation (sum / sum of squares).
struct StatsAccumulator {
    std::int64_t count = 0;
    std::vector<double> sum;
    std::vector<double> sumsq;

    void add_rows(const FeatureMatrix& m);
    FeatureStats finish(double sigma_floor) const;
};

namespace motion {

inline int style_feature_width(int joints) { return 15 * joints + 6; }
inline int pose_state_width(int joints) { return 15 * joints + 13; }

// Reflection across the character's sagittal plane (x = 0) with left/right
// joints swapped via the skeleton mirror map. Exact involution at channel level.
MotionClip mirror_clip(const MotionClip& clip);

// Time-resampling: new frame count = round(T / speed_factor), poses linearly
// interpolated (hemisphere-corrected nlerp for rotations), fps unchanged.
MotionClip resample_clip(const MotionClip& clip, double speed_factor);

// Per-frame root transforms of a clip (world FK + ground projection); the
// previous frame's orientation backs up degenerate hip projections.
std::vector<geom::RootTransform> compute_roots(const MotionClip& clip);

// Style feature rows a = [rho_p, rho_r, rho_p_dot, rho_r_dot, r_p_dot, r_r_dot],
// width 15j+6. Velocities are forward differences; the final frame repeats the
// previous velocity row.
FeatureMatrix extract_style_features(const MotionClip& clip);

// Pose state rows y = [rho_p, rho_r, rho_p_dot, rho_r_dot, r_p, r_r, r_p_dot,
// r_r_dot], width 15j+13; r_r rows are canonical unit quaternions.
FeatureMatrix extract_pose_states(const MotionClip& clip);

// Columns of the pose-state layout that the decoder predicts (everything
// except r_p and r_r): [0, 15j) plus [15j+7, 15j+13).
std::vector<int> pose_prediction_columns(int joints);

// Median ground-projected head z-axis over all frames, renormalized.
geom::Vec2 compute_target_facing(const MotionClip& clip);

// Pose-state rows back to a clip (joint 0 recomposed from the root transform
// and the root-space hips entries).
MotionClip pose_states_to_clip(const FeatureMatrix& states, std::shared_ptr<Skeleton> skeleton,
                               double fps);

FeatureStats fit_normalization(const std::vector<const FeatureMatrix*>& matrices,
                               double sigma_floor = 1e-4);
void normalize_rows(FeatureMatrix& m, const FeatureStats& stats);
void denormalize_rows(FeatureMatrix& m, const FeatureStats& stats);

void write_feature_stats(std::ostream& os, const FeatureStats& s);
FeatureStats read_feature_stats(std::istream& is);
void write_normalization(std::ostream& os, const NormalizationStats& s);
NormalizationStats read_normalization(std::istream& is);

}  // namespace motion
}  // namespace zeggs
