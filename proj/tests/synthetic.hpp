#pragma once

// Procedural speech + gesture fixtures shared by the unit tests, the CLI
// tests and the acceptance suite. Motion and audio are driven by the same
// syllable envelope so the two modalities are genuinely correlated, and the
// two styles ("high", "low") differ in hand height and body sway.

#include <string>

#include "zeggs/audio.hpp"
#include "zeggs/motion.hpp"

namespace synth {

// Seven joints: Hips -> Spine2 -> Head, plus arms with hands off Spine2.
std::shared_ptr<zeggs::Skeleton> make_skeleton();

struct StyleParams {
    double base_arm_deg;   // resting arm elevation
    double arm_swing_deg;  // envelope-driven swing amplitude
    double sway_m;         // hip sway amplitude
    double yaw_deg;        // hip yaw sway amplitude
    double lean_deg;       // spine lean (slump)
};

StyleParams style_params(const std::string& style);  // "high" | "low"

// Shared syllable envelope in [0, 1] (drives the audio amplitude).
double envelope(double t, std::uint64_t seed);
// Slow gesture intensity in [0, 1]: the same pause gate as the audio
// envelope with a gently wandering magnitude.
double gesture_intensity(double t, std::uint64_t seed);

zeggs::MotionClip make_clip(const std::string& style, double seconds, std::uint64_t seed);
zeggs::audio::Waveform make_audio(double seconds, std::uint64_t seed);

// Writes <name>.bvh and <name>.wav under dir; returns the base name.
std::string write_clip_files(const std::string& dir, const std::string& name,
                             const std::string& style, double seconds, std::uint64_t seed);

// Writes a manifest over (name, style, split) triples that were produced by
// write_clip_files in the same directory.
void write_manifest(const std::string& dir, const std::string& filename,
                    const std::vector<std::tuple<std::string, std::string, std::string>>& clips);

// Mean world-space height of the two hand joints over all frames.
double mean_hand_height(const zeggs::MotionClip& clip);
double mean_hand_height(const zeggs::FeatureMatrix& pose_states, const zeggs::Skeleton& skeleton);

// Mean absolute world-space joint position error between two pose-state
// sequences on the same skeleton.
double world_position_mae(const zeggs::FeatureMatrix& a, const zeggs::FeatureMatrix& b,
                          const zeggs::Skeleton& skeleton);

// Mean ground-plane root speed (m/s) of a pose-state sequence.
double mean_root_speed(const zeggs::FeatureMatrix& pose_states, int joints, double fps);

}  // namespace synth
