#include <cmath>
#include <iostream>

#include "zeggs/train.hpp"

namespace zeggs::train {

using geom::Quat;
using geom::Vec3;

namespace {

int augmented_frames(int raw_frames, double speed) {
    return int(std::lround(double(raw_frames) / speed));
}

// Pose of the augmented timeline at integer frame u, with the
// endpoint-preserving mapping src = u * (T_raw-1) / (T_aug-1).
SkeletonPose pose_at(const MotionClip& clip, int u, int t_aug) {
    int t = clip.frame_count();
    double srcpos = (t_aug <= 1) ? 0.0 : double(u) * double(t - 1) / double(t_aug - 1);
    int lo = int(srcpos);
    double frac = srcpos - lo;
    if (frac == 0.0 || lo + 1 >= t) return clip.poses[std::size_t(std::min(lo, t - 1))];
    const SkeletonPose& a = clip.poses[std::size_t(lo)];
    const SkeletonPose& b = clip.poses[std::size_t(lo + 1)];
    SkeletonPose p;
    int j = int(a.translations.size());
    p.translations.resize(std::size_t(j));
    p.rotations.resize(std::size_t(j));
    for (int ji = 0; ji < j; ++ji) {
        Vec3 ta = a.translations[std::size_t(ji)];
        Vec3 tb = b.translations[std::size_t(ji)];
        p.translations[std::size_t(ji)] = ta + (tb - ta) * frac;
        p.rotations[std::size_t(ji)] =
            geom::nlerp(a.rotations[std::size_t(ji)], b.rotations[std::size_t(ji)], frac)
                .canonicalized();
    }
    return p;
}

// Speech row of the augmented timeline at integer frame u (same mapping as
// the motion, clamped to the available speech rows).
void speech_row_at(const CachedClip& clip, int u, int t_aug, int t_raw, double* out) {
    const FeatureMatrix& sp = clip.speech;
    double srcpos = (t_aug <= 1) ? 0.0 : double(u) * double(t_raw - 1) / double(t_aug - 1);
    if (srcpos > double(sp.rows - 1)) srcpos = double(sp.rows - 1);
    int lo = int(srcpos);
    double frac = srcpos - lo;
    if (frac == 0.0 || lo + 1 >= sp.rows) {
        const double* r = sp.row(std::min(lo, sp.rows - 1));
        std::copy_n(r, sp.cols, out);
        return;
    }
    const double* a = sp.row(lo);
    const double* b = sp.row(lo + 1);
    for (int c = 0; c < sp.cols; ++c) out[c] = a[c] + (b[c] - a[c]) * frac;
}

}  // namespace

MotionClip materialize_window(const CachedClip& clip, double speed, int first, int last) {
    int t_aug = augmented_frames(clip.clip.frame_count(), speed);
    if (first < 0 || last >= t_aug || last < first)
        fail(Errc::state, "materialize_window: range out of bounds");
    MotionClip out;
    out.skeleton = clip.clip.skeleton;
    out.fps = clip.clip.fps;
    out.style = clip.style;
    out.source = clip.id;
    out.poses.reserve(std::size_t(last - first + 1));
    for (int u = first; u <= last; ++u) out.poses.push_back(pose_at(clip.clip, u, t_aug));
    return out;
}

BatchSampler::BatchSampler(const DatasetCache& cache, const TrainingConfig& cfg)
    : cache_(&cache), cfg_(cfg) {
    cfg_.validate();
    double worst_speed = 1.0 + cfg_.speed_aug;
    for (int idx : cache.split_indices(/*train=*/true)) {
        const CachedClip& c = cache.clips[std::size_t(idx)];
        int worst_frames = augmented_frames(c.clip.frame_count(), worst_speed);
        // Margins: one frame before the target window for the initial pose and
        // one frame after every window for finite differences.
        if (worst_frames >= cfg_.style_max + 3 && worst_frames >= cfg_.target_frames + 3) {
            eligible_.push_back(idx);
        } else {
            std::cerr << "warning: clip \"" << c.id << "\" too short for style window "
                      << cfg_.style_max << " (has " << c.clip.frame_count()
                      << " frames), excluded from training\n";
        }
    }
    if (eligible_.empty()) fail(Errc::state, "no eligible training clips");
}

Batch BatchSampler::sample(std::int64_t iter) const {
    Batch batch;
    RngStream speed_rng = RngStream::derive(cfg_.seed, {kRngSpeed, std::uint64_t(iter)});
    batch.speed = cfg_.speed_aug == 0.0
                      ? 1.0
                      : speed_rng.uniform(1.0 - cfg_.speed_aug, 1.0 + cfg_.speed_aug);
    int t_frames = cfg_.target_frames;
    for (int item = 0; item < cfg_.batch_size; ++item) {
        RngStream rng = RngStream::derive(cfg_.seed, {kRngBatch, std::uint64_t(iter), std::uint64_t(item)});
        int clip_idx = eligible_[std::size_t(rng.uniform_index(eligible_.size()))];
        const CachedClip& clip = cache_->clips[std::size_t(clip_idx)];
        int t_aug = augmented_frames(clip.clip.frame_count(), batch.speed);

        // Target window [a, a+T); needs frame a-1 (initial pose) and a+T
        // (velocities), so a in [1, t_aug - T - 1].
        int a_max = t_aug - t_frames - 1;
        int a = 1 + int(rng.uniform_index(std::uint64_t(a_max)));

        // Style window [b, b+M) with length M in [style_min, style_max],
        // containing the target window, with one trailing frame available.
        int m_len = cfg_.style_min + int(rng.uniform_index(std::uint64_t(cfg_.style_max - cfg_.style_min + 1)));
        m_len = std::min(m_len, t_aug - 2);
        int b_lo = std::max(0, a + t_frames - m_len);
        int b_hi = std::min(a, t_aug - m_len - 1);
        if (b_hi < b_lo) b_hi = b_lo;
        int b = b_lo + int(rng.uniform_index(std::uint64_t(b_hi - b_lo + 1)));

        TrainItem it;
        it.clip_id = clip.id;
        it.facing = clip.facing;
        it.target_start = a;
        it.style_start = b;
        it.augmented_frames = t_aug;

        MotionClip target_clip = materialize_window(clip, batch.speed, a - 1, a + t_frames);
        FeatureMatrix states = motion::extract_pose_states(target_clip);
        it.init_pose.assign(states.row(0), states.row(0) + states.cols);
        it.target = FeatureMatrix(t_frames, states.cols);
        for (int f = 0; f < t_frames; ++f)
            std::copy_n(states.row(f + 1), states.cols, it.target.row(f));

        MotionClip style_clip = materialize_window(clip, batch.speed, b, b + m_len);
        FeatureMatrix style_feats = motion::extract_style_features(style_clip);
        it.style = FeatureMatrix(m_len, style_feats.cols);
        for (int f = 0; f < m_len; ++f)
            std::copy_n(style_feats.row(f), style_feats.cols, it.style.row(f));

        it.speech = FeatureMatrix(t_frames, clip.speech.cols);
        for (int f = 0; f < t_frames; ++f)
            speech_row_at(clip, a + f, t_aug, clip.clip.frame_count(), it.speech.row(f));

        batch.items.push_back(std::move(it));
    }
    return batch;
}

}  // namespace zeggs::train
