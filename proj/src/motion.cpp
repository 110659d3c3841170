#include "zeggs/motion.hpp"

#include <algorithm>
#include <cmath>

#include "zeggs/binio.hpp"

namespace zeggs {

void StatsAccumulator::add_rows(const FeatureMatrix& m) {
    if (sum.empty()) {
        sum.assign(std::size_t(m.cols), 0.0);
        sumsq.assign(std::size_t(m.cols), 0.0);
    }
    if (int(sum.size()) != m.cols) fail(Errc::shape, "stats accumulator width mismatch");
    for (int r = 0; r < m.rows; ++r) {
        const double* row = m.row(r);
        for (int c = 0; c < m.cols; ++c) {
            sum[std::size_t(c)] += row[c];
            sumsq[std::size_t(c)] += row[c] * row[c];
        }
    }
    count += m.rows;
}

FeatureStats StatsAccumulator::finish(double sigma_floor) const {
    if (count == 0) fail(Errc::state, "cannot fit statistics on an empty dataset");
    FeatureStats s;
    s.mean.resize(sum.size());
    s.stdev.resize(sum.size());
    for (std::size_t c = 0; c < sum.size(); ++c) {
        double mu = sum[c] / double(count);
        double var = std::max(0.0, sumsq[c] / double(count) - mu * mu);
        s.mean[c] = mu;
        s.stdev[c] = std::max(sigma_floor, std::sqrt(var));
    }
    return s;
}

namespace motion {

using geom::Quat;
using geom::RootTransform;
using geom::Vec2;
using geom::Vec3;

MotionClip mirror_clip(const MotionClip& clip) {
    const Skeleton& s = *clip.skeleton;
    if (s.mirror_map.empty()) fail(Errc::config, "mirror_clip: skeleton has no mirror map");
    for (int i = 0; i < s.joint_count(); ++i)
        if (s.mirror_map[std::size_t(i)] < 0)
            fail(Errc::config, "mirror_clip: unmapped asymmetric joint \"" + s.names[std::size_t(i)] +
                                   "\"");
    MotionClip out;
    out.skeleton = clip.skeleton;
    out.fps = clip.fps;
    out.style = clip.style;
    out.source = clip.source + "|M";
    out.poses.reserve(clip.poses.size());
    for (const auto& pose : clip.poses) {
        SkeletonPose p;
        p.translations.resize(pose.translations.size());
        p.rotations.resize(pose.rotations.size());
        for (int i = 0; i < s.joint_count(); ++i) {
            int src = s.mirror_map[std::size_t(i)];
            const Vec3& t = pose.translations[std::size_t(src)];
            const Quat& q = pose.rotations[std::size_t(src)];
            // Conjugation by diag(-1,1,1): reflection across the x=0 plane.
            p.translations[std::size_t(i)] = {-t.x, t.y, t.z};
            p.rotations[std::size_t(i)] = {q.w, q.x, -q.y, -q.z};
        }
        out.poses.push_back(std::move(p));
    }
    return out;
}

MotionClip resample_clip(const MotionClip& clip, double speed_factor) {
    if (speed_factor < 0.5 || speed_factor > 2.0)
        fail(Errc::config, "resample_clip: speed factor must be in [0.5, 2]");
    int t = clip.frame_count();
    int t_new = int(std::lround(double(t) / speed_factor));
    if (t_new < 2) fail(Errc::config, "resample_clip: result would have fewer than 2 frames");
    MotionClip out;
    out.skeleton = clip.skeleton;
    out.fps = clip.fps;
    out.style = clip.style;
    out.source = clip.source;
    out.poses.resize(std::size_t(t_new));
    int j = clip.skeleton->joint_count();
    for (int u = 0; u < t_new; ++u) {
        double srcpos = (t_new == 1) ? 0.0 : double(u) * double(t - 1) / double(t_new - 1);
        int lo = int(srcpos);
        double frac = srcpos - lo;
        SkeletonPose& p = out.poses[std::size_t(u)];
        if (frac == 0.0 || lo + 1 >= t) {
            p = clip.poses[std::size_t(std::min(lo, t - 1))];
            continue;
        }
        const SkeletonPose& a = clip.poses[std::size_t(lo)];
        const SkeletonPose& b = clip.poses[std::size_t(lo + 1)];
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
    }
    return out;
}

std::vector<RootTransform> compute_roots(const MotionClip& clip) {
    int t = clip.frame_count();
    std::vector<RootTransform> roots(static_cast<std::size_t>(t));
    for (int f = 0; f < t; ++f) {
        auto world = geom::forward_kinematics(*clip.skeleton, clip.poses[std::size_t(f)],
                                              RootTransform{});
        roots[std::size_t(f)] =
            geom::compute_root(*clip.skeleton, world, f > 0 ? &roots[std::size_t(f - 1)] : nullptr);
    }
    return roots;
}

namespace {

struct RootSpaceFrames {
    // Per frame: root transform, root-space hips translation/rotation.
    std::vector<RootTransform> roots;
    std::vector<Vec3> hips_pos;
    std::vector<Quat> hips_rot;
};

RootSpaceFrames root_space_frames(const MotionClip& clip) {
    RootSpaceFrames rs;
    rs.roots = compute_roots(clip);
    int t = clip.frame_count();
    rs.hips_pos.resize(std::size_t(t));
    rs.hips_rot.resize(std::size_t(t));
    for (int f = 0; f < t; ++f) {
        const SkeletonPose& pose = clip.poses[std::size_t(f)];
        const RootTransform& root = rs.roots[std::size_t(f)];
        // With an identity root, the hips world transform equals its locals.
        rs.hips_pos[std::size_t(f)] = root.to_root_point(pose.translations[0]);
        rs.hips_rot[std::size_t(f)] =
            (root.orientation.conjugated() * pose.rotations[0]).normalized().canonicalized();
    }
    return rs;
}

// Writes [rho_p, rho_r, rho_p_dot, rho_r_dot, r_p_dot, r_r_dot] into the
// first 15j+6 columns of each row.
void fill_style_columns(const MotionClip& clip, const RootSpaceFrames& rs, FeatureMatrix& m) {
    const Skeleton& s = *clip.skeleton;
    int j = s.joint_count();
    int t = clip.frame_count();
    double dt = 1.0 / clip.fps;

    // Per-joint position/rotation tracks in the representation the features
    // use (hips expressed in root space, other joints in parent space).
    std::vector<std::vector<Vec3>> pos_tracks(static_cast<std::size_t>(j));
    std::vector<std::vector<Quat>> rot_tracks(static_cast<std::size_t>(j));
    for (int ji = 0; ji < j; ++ji) {
        pos_tracks[std::size_t(ji)].resize(std::size_t(t));
        rot_tracks[std::size_t(ji)].resize(std::size_t(t));
        for (int f = 0; f < t; ++f) {
            if (ji == 0) {
                pos_tracks[0][std::size_t(f)] = rs.hips_pos[std::size_t(f)];
                rot_tracks[0][std::size_t(f)] = rs.hips_rot[std::size_t(f)];
            } else {
                pos_tracks[std::size_t(ji)][std::size_t(f)] =
                    clip.poses[std::size_t(f)].translations[std::size_t(ji)];
                rot_tracks[std::size_t(ji)][std::size_t(f)] =
                    clip.poses[std::size_t(f)].rotations[std::size_t(ji)];
            }
        }
    }

    for (int ji = 0; ji < j; ++ji) {
        auto vel_p = geom::finite_difference_positions(pos_tracks[std::size_t(ji)], dt);
        auto vel_r = geom::finite_difference_rotations(rot_tracks[std::size_t(ji)], dt);
        for (int f = 0; f < t; ++f) {
            double* row = m.row(f);
            const Vec3& p = pos_tracks[std::size_t(ji)][std::size_t(f)];
            row[3 * ji + 0] = p.x;
            row[3 * ji + 1] = p.y;
            row[3 * ji + 2] = p.z;
            auto six = geom::two_axis_from_quat(rot_tracks[std::size_t(ji)][std::size_t(f)]);
            for (int c = 0; c < 6; ++c) row[3 * j + 6 * ji + c] = six[std::size_t(c)];
            const Vec3& vp = vel_p[std::size_t(std::min(f, t - 2))];
            row[9 * j + 3 * ji + 0] = vp.x;
            row[9 * j + 3 * ji + 1] = vp.y;
            row[9 * j + 3 * ji + 2] = vp.z;
            const Vec3& vr = vel_r[std::size_t(std::min(f, t - 2))];
            row[12 * j + 3 * ji + 0] = vr.x;
            row[12 * j + 3 * ji + 1] = vr.y;
            row[12 * j + 3 * ji + 2] = vr.z;
        }
    }

    for (int f = 0; f < t; ++f) {
        int fv = std::min(f, t - 2);  // final frame repeats the previous velocity
        const RootTransform& root = rs.roots[std::size_t(fv)];
        const RootTransform& next = rs.roots[std::size_t(fv + 1)];
        Vec3 vp = root.to_root_dir(next.position - root.position) * clip.fps;
        Quat rel = (next.orientation * root.orientation.conjugated()).normalized();
        Vec3 vr = root.to_root_dir(geom::scaled_angle_axis_from_quat(rel) * clip.fps);
        double* row = m.row(f);
        row[15 * j + 0] = vp.x;
        row[15 * j + 1] = vp.y;
        row[15 * j + 2] = vp.z;
        row[15 * j + 3] = vr.x;
        row[15 * j + 4] = vr.y;
        row[15 * j + 5] = vr.z;
    }
}

}  // namespace

FeatureMatrix extract_style_features(const MotionClip& clip) {
    if (clip.frame_count() < 2) fail(Errc::shape, "feature extraction needs at least 2 frames");
    int j = clip.skeleton->joint_count();
    FeatureMatrix m(clip.frame_count(), style_feature_width(j));
    RootSpaceFrames rs = root_space_frames(clip);
    fill_style_columns(clip, rs, m);
    return m;
}

FeatureMatrix extract_pose_states(const MotionClip& clip) {
    if (clip.frame_count() < 2) fail(Errc::shape, "feature extraction needs at least 2 frames");
    int j = clip.skeleton->joint_count();
    int t = clip.frame_count();
    FeatureMatrix style(t, style_feature_width(j));
    RootSpaceFrames rs = root_space_frames(clip);
    fill_style_columns(clip, rs, style);

    FeatureMatrix m(t, pose_state_width(j));
    for (int f = 0; f < t; ++f) {
        const double* a = style.row(f);
        double* y = m.row(f);
        // [rho_p, rho_r, rho_p_dot, rho_r_dot]
        std::copy_n(a, 15 * j, y);
        // r_p, r_r
        const RootTransform& root = rs.roots[std::size_t(f)];
        y[15 * j + 0] = root.position.x;
        y[15 * j + 1] = root.position.y;
        y[15 * j + 2] = root.position.z;
        Quat q = root.orientation.canonicalized();
        y[15 * j + 3] = q.w;
        y[15 * j + 4] = q.x;
        y[15 * j + 5] = q.y;
        y[15 * j + 6] = q.z;
        // r_p_dot, r_r_dot
        std::copy_n(a + 15 * j, 6, y + 15 * j + 7);
    }
    return m;
}

std::vector<int> pose_prediction_columns(int joints) {
    std::vector<int> cols;
    cols.reserve(std::size_t(style_feature_width(joints)));
    for (int c = 0; c < 15 * joints; ++c) cols.push_back(c);
    for (int c = 15 * joints + 7; c < pose_state_width(joints); ++c) cols.push_back(c);
    return cols;
}

Vec2 compute_target_facing(const MotionClip& clip) {
    const Skeleton& s = *clip.skeleton;
    int head = s.head_index();
    std::vector<double> xs, zs;
    for (const auto& pose : clip.poses) {
        auto world = geom::forward_kinematics(s, pose, RootTransform{});
        Vec3 dir = world[std::size_t(head)].rotation.rotate({0, 0, 1});
        Vec2 proj{dir.x, dir.z};
        double n = proj.norm();
        if (n < 1e-6) continue;
        xs.push_back(proj.x / n);
        zs.push_back(proj.z / n);
    }
    if (xs.empty()) fail(Errc::numeric, "target facing: all head directions are degenerate");
    auto median = [](std::vector<double>& v) {
        std::sort(v.begin(), v.end());
        std::size_t n = v.size();
        return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    Vec2 med{median(xs), median(zs)};
    if (med.norm() < 1e-6) fail(Errc::numeric, "target facing: median direction is degenerate");
    return med.normalized();
}

MotionClip pose_states_to_clip(const FeatureMatrix& states, std::shared_ptr<Skeleton> skeleton,
                               double fps) {
    int j = skeleton->joint_count();
    if (states.cols != pose_state_width(j))
        fail(Errc::shape, "pose_states_to_clip: width mismatch for " + std::to_string(j) + " joints");
    MotionClip clip;
    clip.skeleton = std::move(skeleton);
    clip.fps = fps;
    clip.poses.resize(std::size_t(states.rows));
    for (int f = 0; f < states.rows; ++f) {
        const double* row = states.row(f);
        SkeletonPose& pose = clip.poses[std::size_t(f)];
        pose.translations.resize(std::size_t(j));
        pose.rotations.resize(std::size_t(j));
        RootTransform root;
        root.position = {row[15 * j], row[15 * j + 1], row[15 * j + 2]};
        root.orientation =
            Quat{row[15 * j + 3], row[15 * j + 4], row[15 * j + 5], row[15 * j + 6]}.normalized();
        for (int i = 0; i < j; ++i) {
            Vec3 t{row[3 * i], row[3 * i + 1], row[3 * i + 2]};
            geom::TwoAxisRotation six;
            for (int c = 0; c < 6; ++c) six[std::size_t(c)] = row[3 * j + 6 * i + c];
            Quat q = geom::quat_from_two_axis(six);
            if (i == 0) {
                pose.translations[0] = root.from_root_point(t);
                pose.rotations[0] = (root.orientation * q).normalized().canonicalized();
            } else {
                pose.translations[std::size_t(i)] = t;
                pose.rotations[std::size_t(i)] = q;
            }
        }
    }
    return clip;
}

FeatureStats fit_normalization(const std::vector<const FeatureMatrix*>& matrices,
                               double sigma_floor) {
    StatsAccumulator acc;
    for (const auto* m : matrices) acc.add_rows(*m);
    return acc.finish(sigma_floor);
}

void normalize_rows(FeatureMatrix& m, const FeatureStats& stats) {
    if (m.cols != stats.width()) fail(Errc::shape, "normalize: width mismatch");
    for (int r = 0; r < m.rows; ++r) {
        double* row = m.row(r);
        for (int c = 0; c < m.cols; ++c)
            row[c] = (row[c] - stats.mean[std::size_t(c)]) / stats.stdev[std::size_t(c)];
    }
}

void denormalize_rows(FeatureMatrix& m, const FeatureStats& stats) {
    if (m.cols != stats.width()) fail(Errc::shape, "denormalize: width mismatch");
    for (int r = 0; r < m.rows; ++r) {
        double* row = m.row(r);
        for (int c = 0; c < m.cols; ++c)
            row[c] = row[c] * stats.stdev[std::size_t(c)] + stats.mean[std::size_t(c)];
    }
}

void write_feature_stats(std::ostream& os, const FeatureStats& s) {
    binio::write_vector<double>(os, s.mean);
    binio::write_vector<double>(os, s.stdev);
}

FeatureStats read_feature_stats(std::istream& is) {
    FeatureStats s;
    s.mean = binio::read_vector<double>(is);
    s.stdev = binio::read_vector<double>(is);
    return s;
}

void write_normalization(std::ostream& os, const NormalizationStats& s) {
    write_feature_stats(os, s.pose);
    write_feature_stats(os, s.style);
    write_feature_stats(os, s.speech);
    binio::write_le<double>(os, s.sigma_floor);
}

NormalizationStats read_normalization(std::istream& is) {
    NormalizationStats s;
    s.pose = read_feature_stats(is);
    s.style = read_feature_stats(is);
    s.speech = read_feature_stats(is);
    s.sigma_floor = binio::read_le<double>(is);
    return s;
}

}  // namespace motion
}  // namespace zeggs
