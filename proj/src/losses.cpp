#include <cmath>

#include "zeggs/model.hpp"

namespace zeggs::model {

using tc::Tape;
using tc::Tensor;

namespace {

template <typename T>
Tensor<T> constant_from(const FeatureMatrix& m) {
    std::vector<T> data(m.data.size());
    for (std::size_t i = 0; i < m.data.size(); ++i) data[i] = T(m.data[i]);
    return Tensor<T>::from({m.rows, m.cols}, std::move(data));
}

// Target-side world-space quantities, computed in double precision.
struct TargetWorld {
    FeatureMatrix pos;        // [T, 3j]
    FeatureMatrix rot;        // [T, 9j] row-major matrices
    FeatureMatrix vel;        // [T, 3j+3] world-aligned translational velocities
    FeatureMatrix ang;        // [T, 3j+3] world-aligned angular velocities
    FeatureMatrix local_vel;  // [T, 3j+3]
    FeatureMatrix local_ang;  // [T, 3j+3]
};

TargetWorld target_world(const FeatureMatrix& y, const Skeleton& skeleton) {
    int j = skeleton.joint_count();
    int t = y.rows;
    TargetWorld w;
    w.pos = FeatureMatrix(t, 3 * j);
    w.rot = FeatureMatrix(t, 9 * j);
    w.vel = FeatureMatrix(t, 3 * j + 3);
    w.ang = FeatureMatrix(t, 3 * j + 3);
    w.local_vel = FeatureMatrix(t, 3 * j + 3);
    w.local_ang = FeatureMatrix(t, 3 * j + 3);
    for (int f = 0; f < t; ++f) {
        const double* row = y.row(f);
        SkeletonPose pose;
        pose.translations.resize(std::size_t(j));
        pose.rotations.resize(std::size_t(j));
        for (int i = 0; i < j; ++i) {
            pose.translations[std::size_t(i)] = {row[3 * i], row[3 * i + 1], row[3 * i + 2]};
            geom::TwoAxisRotation six;
            for (int c = 0; c < 6; ++c) six[std::size_t(c)] = row[3 * j + 6 * i + c];
            pose.rotations[std::size_t(i)] = geom::quat_from_two_axis(six);
        }
        geom::RootTransform root;
        root.position = {row[15 * j], row[15 * j + 1], row[15 * j + 2]};
        root.orientation =
            geom::Quat{row[15 * j + 3], row[15 * j + 4], row[15 * j + 5], row[15 * j + 6]}
                .normalized();
        auto world = geom::forward_kinematics(skeleton, pose, root);
        for (int i = 0; i < j; ++i) {
            const auto& jt = world[std::size_t(i)];
            w.pos.at(f, 3 * i) = jt.position.x;
            w.pos.at(f, 3 * i + 1) = jt.position.y;
            w.pos.at(f, 3 * i + 2) = jt.position.z;
            geom::Mat3 m = jt.rotation.to_matrix();
            for (int c = 0; c < 9; ++c) w.rot.at(f, 9 * i + c) = m.m[std::size_t(c)];
            const geom::Quat& parent_rot =
                (i == 0) ? root.orientation : world[std::size_t(skeleton.parents[std::size_t(i)])].rotation;
            geom::Vec3 lv{row[9 * j + 3 * i], row[9 * j + 3 * i + 1], row[9 * j + 3 * i + 2]};
            geom::Vec3 la{row[12 * j + 3 * i], row[12 * j + 3 * i + 1], row[12 * j + 3 * i + 2]};
            geom::Vec3 wv = parent_rot.rotate(lv);
            geom::Vec3 wa = parent_rot.rotate(la);
            for (int c = 0; c < 3; ++c) {
                w.local_vel.at(f, 3 * i + c) = (&lv.x)[c];
                w.local_ang.at(f, 3 * i + c) = (&la.x)[c];
                w.vel.at(f, 3 * i + c) = (&wv.x)[c];
                w.ang.at(f, 3 * i + c) = (&wa.x)[c];
            }
        }
        geom::Vec3 rv{row[15 * j + 7], row[15 * j + 8], row[15 * j + 9]};
        geom::Vec3 ra{row[15 * j + 10], row[15 * j + 11], row[15 * j + 12]};
        geom::Vec3 wrv = root.orientation.rotate(rv);
        geom::Vec3 wra = root.orientation.rotate(ra);
        for (int c = 0; c < 3; ++c) {
            w.local_vel.at(f, 3 * j + c) = (&rv.x)[c];
            w.local_ang.at(f, 3 * j + c) = (&ra.x)[c];
            w.vel.at(f, 3 * j + c) = (&wrv.x)[c];
            w.ang.at(f, 3 * j + c) = (&wra.x)[c];
        }
    }
    return w;
}

}  // namespace

template <typename T>
ReconLoss<T> reconstruction_loss(Tape<T>& tape, const GestureModel<T>& model,
                                 const Rollout<T>& pred, const LossTargets& target,
                                 const Skeleton& skeleton, const LossWeights& weights, double fps) {
    int j = skeleton.joint_count();
    int t = pred.pose_part.dim(0);
    if (target.pose_states.rows != t)
        fail(Errc::shape, "reconstruction loss: prediction has " + std::to_string(t) +
                              " frames but target has " + std::to_string(target.pose_states.rows));
    if (target.pose_states.cols != motion::pose_state_width(j))
        fail(Errc::shape, "reconstruction loss: target width mismatch");

    // Predicted blocks.
    Tensor<T> rp = tape.slice_cols(pred.pose_part, 0, 3 * j);
    Tensor<T> rr = tape.slice_cols(pred.pose_part, 3 * j, 6 * j);
    Tensor<T> vp = tape.slice_cols(pred.pose_part, 9 * j, 3 * j);
    Tensor<T> vr = tape.slice_cols(pred.pose_part, 12 * j, 3 * j);
    Tensor<T> rvp = tape.slice_cols(pred.pose_part, 15 * j, 3);
    Tensor<T> rvr = tape.slice_cols(pred.pose_part, 15 * j + 3, 3);

    // Root rotation matrices from the accumulated yaw: R_y(yaw), row-major.
    Tensor<T> c = tape.cos(pred.root_yaw);
    Tensor<T> s = tape.sin(pred.root_yaw);
    Tensor<T> zero = Tensor<T>::zeros({t, 1});
    Tensor<T> one = Tensor<T>::full({t, 1}, T(1));
    Tensor<T> neg_s = tape.scale(s, T(-1));
    Tensor<T> root_rot = tape.concat_cols({c, zero, s, zero, one, zero, neg_s, zero, c});

    // Differentiable forward kinematics, batched over time per joint.
    std::vector<Tensor<T>> world_rot(static_cast<std::size_t>(j));
    std::vector<Tensor<T>> world_pos(static_cast<std::size_t>(j));
    for (int i = 0; i < j; ++i) {
        Tensor<T> local_rot = tape.six_to_rotmat(tape.slice_cols(rr, 6 * i, 6));
        Tensor<T> local_pos = tape.slice_cols(rp, 3 * i, 3);
        Tensor<T> parent_rot = (i == 0) ? root_rot : world_rot[std::size_t(skeleton.parents[std::size_t(i)])];
        Tensor<T> parent_pos = (i == 0) ? pred.root_pos : world_pos[std::size_t(skeleton.parents[std::size_t(i)])];
        world_rot[std::size_t(i)] = tape.rotmat_mul3(parent_rot, local_rot);
        world_pos[std::size_t(i)] = tape.add(parent_pos, tape.rotmat_apply3(parent_rot, local_pos));
    }
    Tensor<T> wpos = tape.concat_cols(world_pos);
    Tensor<T> wrot = tape.concat_cols(world_rot);

    // World-aligned velocities (rotated by the parent's world rotation).
    std::vector<Tensor<T>> wvel_parts, wang_parts;
    for (int i = 0; i < j; ++i) {
        Tensor<T> parent_rot = (i == 0) ? root_rot : world_rot[std::size_t(skeleton.parents[std::size_t(i)])];
        wvel_parts.push_back(tape.rotmat_apply3(parent_rot, tape.slice_cols(vp, 3 * i, 3)));
        wang_parts.push_back(tape.rotmat_apply3(parent_rot, tape.slice_cols(vr, 3 * i, 3)));
    }
    wvel_parts.push_back(tape.rotmat_apply3(root_rot, rvp));
    wang_parts.push_back(tape.rotmat_apply3(root_rot, rvr));
    Tensor<T> wvel = tape.concat_cols(wvel_parts);
    Tensor<T> wang = tape.concat_cols(wang_parts);
    Tensor<T> lvel = tape.concat_cols({vp, rvp});
    Tensor<T> lang = tape.concat_cols({vr, rvr});

    // Predicted character facing: ground-projected z-axis of the hips.
    Tensor<T> fx = tape.slice_cols(world_rot[0], 2, 1);
    Tensor<T> fz = tape.slice_cols(world_rot[0], 8, 1);
    Tensor<T> inv_norm = tape.rsqrt_eps(tape.add(tape.mul(fx, fx), tape.mul(fz, fz)), T(1e-12));
    Tensor<T> facing2d = tape.concat_cols({tape.mul(fx, inv_norm), tape.mul(fz, inv_norm)});

    // Target constants.
    const FeatureMatrix& y = target.pose_states;
    TargetWorld tw = target_world(y, skeleton);
    auto target_cols = [&](int from, int count) {
        FeatureMatrix m(t, count);
        for (int f = 0; f < t; ++f)
            for (int cc = 0; cc < count; ++cc) m.at(f, cc) = y.at(f, from + cc);
        return m;
    };
    Tensor<T> t_rp = constant_from<T>(target_cols(0, 3 * j));
    Tensor<T> t_rr = constant_from<T>(target_cols(3 * j, 6 * j));
    Tensor<T> t_wpos = constant_from<T>(tw.pos);
    Tensor<T> t_wrot = constant_from<T>(tw.rot);
    Tensor<T> t_lvel = constant_from<T>(tw.local_vel);
    Tensor<T> t_lang = constant_from<T>(tw.local_ang);
    Tensor<T> t_wvel = constant_from<T>(tw.vel);
    Tensor<T> t_wang = constant_from<T>(tw.ang);
    FeatureMatrix facing_rows(t, 2);
    for (int f = 0; f < t; ++f) {
        facing_rows.at(f, 0) = target.facing.x;
        facing_rows.at(f, 1) = target.facing.z;
    }
    Tensor<T> t_facing = constant_from<T>(facing_rows);

    auto fd = [&](const Tensor<T>& x) {
        return tape.scale(tape.sub(tape.slice_rows(x, 1, t - 1), tape.slice_rows(x, 0, t - 1)),
                          T(fps));
    };

    Tensor<T> loss_p = tape.add(tape.mae(rp, t_rp), tape.mae(wpos, t_wpos));
    Tensor<T> loss_r = tape.add(tape.mae(rr, t_rr), tape.mae(wrot, t_wrot));
    Tensor<T> loss_vp = tape.add(tape.mae(lvel, t_lvel), tape.mae(wvel, t_wvel));
    Tensor<T> loss_vr = tape.add(tape.mae(lang, t_lang), tape.mae(wang, t_wang));
    Tensor<T> loss_dp, loss_dr;
    if (t >= 2) {
        loss_dp = tape.add(tape.mae(fd(rp), fd(t_rp)), tape.mae(fd(wpos), fd(t_wpos)));
        loss_dr = tape.add(tape.mae(fd(rr), fd(t_rr)), tape.mae(fd(wrot), fd(t_wrot)));
    } else {
        loss_dp = Tensor<T>::zeros({1});
        loss_dr = Tensor<T>::zeros({1});
    }
    Tensor<T> loss_f = tape.mae(facing2d, t_facing);

    Tensor<T> total = tape.scale(loss_p, T(weights.p));
    total = tape.add(total, tape.scale(loss_r, T(weights.r)));
    total = tape.add(total, tape.scale(loss_vp, T(weights.vp)));
    total = tape.add(total, tape.scale(loss_vr, T(weights.vr)));
    total = tape.add(total, tape.scale(loss_dp, T(weights.dp)));
    total = tape.add(total, tape.scale(loss_dr, T(weights.dr)));
    total = tape.add(total, tape.scale(loss_f, T(weights.f)));

    ReconLoss<T> out;
    out.total = total;
    out.terms.p = double(loss_p.item());
    out.terms.r = double(loss_r.item());
    out.terms.vp = double(loss_vp.item());
    out.terms.vr = double(loss_vr.item());
    out.terms.dp = double(loss_dp.item());
    out.terms.dr = double(loss_dr.item());
    out.terms.f = double(loss_f.item());
    out.terms.recon = double(total.item());
    (void)model;
    return out;
}

template ReconLoss<float> reconstruction_loss<float>(Tape<float>&, const GestureModel<float>&,
                                                     const Rollout<float>&, const LossTargets&,
                                                     const Skeleton&, const LossWeights&, double);
template ReconLoss<double> reconstruction_loss<double>(Tape<double>&, const GestureModel<double>&,
                                                       const Rollout<double>&, const LossTargets&,
                                                       const Skeleton&, const LossWeights&, double);

}  // namespace zeggs::model
