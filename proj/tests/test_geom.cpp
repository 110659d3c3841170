#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "zeggs/geom.hpp"
#include "zeggs/rng.hpp"
#include "zeggs/skeleton.hpp"

using namespace zeggs;
using namespace zeggs::geom;

namespace {

constexpr double kPi = 3.14159265358979323846;

Quat random_quat(RngStream& rng) {
    Quat q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    return q.normalized().canonicalized();
}

double quat_angle_between(const Quat& a, const Quat& b) {
    double d = std::abs(a.dot(b));
    return 2.0 * std::acos(std::min(1.0, d));
}

double wrap_angle(double a) {
    while (a > kPi) a -= 2 * kPi;
    while (a < -kPi) a += 2 * kPi;
    return a;
}

Skeleton two_joint_chain() {
    Skeleton s;
    s.names = {"Hips", "Head"};
    s.parents = {-1, 0};
    s.offsets = {{0, 0, 0}, {1, 0, 0}};
    s.has_end_site = {false, false};
    s.end_site_offsets = {{0, 0, 0}, {0, 0, 0}};
    s.hips_name = "Hips";
    s.spine2_name = "Hips";
    s.head_name = "Head";
    s.mirror_map = {0, 1};
    return s;
}

}  // namespace

TEST_CASE("two-axis representation round trips") {
    Mat3 id;
    auto six = two_axis_from_matrix(id);
    CHECK(six == TwoAxisRotation{1, 0, 0, 0, 1, 0});
    Mat3 back = matrix_from_two_axis(six);
    for (int i = 0; i < 9; ++i) CHECK(back.m[std::size_t(i)] == doctest::Approx(id.m[std::size_t(i)]));

    Quat yaw90 = Quat::from_yaw(kPi / 2);
    Mat3 m = yaw90.to_matrix();
    Mat3 m2 = matrix_from_two_axis(two_axis_from_matrix(m));
    for (int i = 0; i < 9; ++i) CHECK(std::abs(m2.m[std::size_t(i)] - m.m[std::size_t(i)]) < 1e-6);

    RngStream rng(1);
    for (int rep = 0; rep < 100; ++rep) {
        Quat q = random_quat(rng);
        Mat3 r = q.to_matrix();
        Mat3 rt = matrix_from_two_axis(two_axis_from_matrix(r));
        for (int i = 0; i < 9; ++i) CHECK(std::abs(rt.m[std::size_t(i)] - r.m[std::size_t(i)]) < 1e-6);
    }
}

TEST_CASE("perturbed two-axis input reconstructs a proper rotation") {
    RngStream rng(2);
    for (int rep = 0; rep < 50; ++rep) {
        Quat q = random_quat(rng);
        auto six = two_axis_from_quat(q);
        for (auto& v : six) v += rng.uniform(-1e-2, 1e-2);
        Mat3 r = matrix_from_two_axis(six);
        CHECK(r.det() == doctest::Approx(1.0).epsilon(1e-6));
        Mat3 should_be_id = r * r.transposed();
        for (int i = 0; i < 9; ++i)
            CHECK(std::abs(should_be_id.m[std::size_t(i)] - Mat3::identity().m[std::size_t(i)]) < 1e-9);
    }
}

TEST_CASE("two-axis degenerate input raises") {
    CHECK_THROWS_AS(matrix_from_two_axis({0, 0, 0, 0, 1, 0}), Error);
    CHECK_THROWS_AS(matrix_from_two_axis({1, 0, 0, 2, 0, 0}), Error);
}

TEST_CASE("scaled angle-axis conversions") {
    Vec3 v = scaled_angle_axis_from_quat(Quat::identity());
    CHECK(v.norm() == 0.0);

    Quat qx = Quat::from_axis_angle({1, 0, 0}, kPi / 2);
    Vec3 sx = scaled_angle_axis_from_quat(qx);
    CHECK(sx.x == doctest::Approx(kPi / 2));
    CHECK(std::abs(sx.y) < 1e-12);
    CHECK(std::abs(sx.z) < 1e-12);

    CHECK(quat_from_scaled_angle_axis({0, 0, 0}).w == 1.0);

    RngStream rng(3);
    for (int rep = 0; rep < 200; ++rep) {
        Quat q = random_quat(rng);
        // keep away from the pi boundary
        if (2.0 * std::atan2(std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z), q.w) > kPi - 1e-3) continue;
        Quat rt = quat_from_scaled_angle_axis(scaled_angle_axis_from_quat(q)).canonicalized();
        CHECK(quat_angle_between(rt, q) < 1e-6);
    }

    // magnitude stays in [0, pi]
    for (int rep = 0; rep < 100; ++rep) {
        Quat q = random_quat(rng);
        CHECK(scaled_angle_axis_from_quat(q).norm() <= kPi + 1e-9);
    }
}

TEST_CASE("forward kinematics basics") {
    Skeleton s = two_joint_chain();
    s.validate();
    SkeletonPose rest = SkeletonPose::rest(s);
    auto world = forward_kinematics(s, rest, RootTransform{});
    CHECK(world[1].position.x == doctest::Approx(1.0));
    CHECK(world[1].position.y == doctest::Approx(0.0));
    CHECK(world[1].position.z == doctest::Approx(0.0));

    // Parent yawed +90 degrees about vertical: +x maps to -z in our
    // right-handed, y-up convention.
    SkeletonPose p = rest;
    p.rotations[0] = Quat::from_yaw(kPi / 2);
    world = forward_kinematics(s, p, RootTransform{});
    CHECK(std::abs(world[1].position.x - 0.0) < 1e-12);
    CHECK(std::abs(world[1].position.z - (-1.0)) < 1e-12);
}

TEST_CASE("forward kinematics is rigidly equivariant under root motion") {
    RngStream rng(4);
    Skeleton s = two_joint_chain();
    for (int rep = 0; rep < 30; ++rep) {
        SkeletonPose p;
        p.translations = {{rng.normal(), rng.normal(), rng.normal()},
                          {rng.normal(), rng.normal(), rng.normal()}};
        p.rotations = {random_quat(rng), random_quat(rng)};
        RootTransform root = RootTransform::from_yaw(rng.uniform(-3, 3),
                                                     {rng.normal(), 0, rng.normal()});
        auto base = forward_kinematics(s, p, RootTransform{});
        auto moved = forward_kinematics(s, p, root);
        for (int i = 0; i < 2; ++i) {
            Vec3 expect = root.from_root_point(base[std::size_t(i)].position);
            Vec3 diff = expect - moved[std::size_t(i)].position;
            CHECK(diff.norm() < 1e-5);
            Quat er = (root.orientation * base[std::size_t(i)].rotation).normalized();
            CHECK(quat_angle_between(er, moved[std::size_t(i)].rotation) < 1e-5);
        }
    }
}

TEST_CASE("compute_root position, yaw and degeneracy handling") {
    Skeleton s = two_joint_chain();
    SkeletonPose rest = SkeletonPose::rest(s);

    auto world = forward_kinematics(s, rest, RootTransform{});
    RootTransform r = compute_root(s, world);
    CHECK(r.position.norm() < 1e-12);
    CHECK(r.yaw() == doctest::Approx(0.0));

    RootTransform moved{{2, 1, 3}, Quat::identity()};
    world = forward_kinematics(s, rest, moved);
    r = compute_root(s, world);
    CHECK(r.position.x == doctest::Approx(2.0));
    CHECK(r.position.y == doctest::Approx(0.0));
    CHECK(r.position.z == doctest::Approx(3.0));

    SkeletonPose yawed = rest;
    yawed.rotations[0] = Quat::from_yaw(kPi / 6);
    world = forward_kinematics(s, yawed, RootTransform{});
    r = compute_root(s, world);
    CHECK(std::abs(r.yaw() - kPi / 6) < 1e-5);

    // Hip z-axis vertical: falls back to previous orientation, errors on first frame.
    SkeletonPose degen = rest;
    degen.rotations[0] = Quat::from_axis_angle({1, 0, 0}, -kPi / 2);  // z-axis -> up
    world = forward_kinematics(s, degen, RootTransform{});
    CHECK_THROWS_AS(compute_root(s, world), Error);
    RootTransform prev = RootTransform::from_yaw(0.7);
    RootTransform fb = compute_root(s, world, &prev);
    CHECK(fb.yaw() == doctest::Approx(0.7));
}

TEST_CASE("integrate_root basics and closed-form yaw") {
    RootTransform root;
    RootTransform same = integrate_root(root, {0, 0, 0}, {0, 0, 0}, 1.0 / 60);
    CHECK(same.position.x == 0.0);
    CHECK(same.position.y == 0.0);
    CHECK(same.position.z == 0.0);
    CHECK(same.orientation.w == 1.0);

    RootTransform fwd = integrate_root(root, {0, 0, 1}, {0, 0, 0}, 1.0 / 60);
    CHECK(fwd.position.z == doctest::Approx(1.0 / 60));

    RootTransform r;
    for (int i = 0; i < 60; ++i) r = integrate_root(r, {0, 0, 0}, {0, kPi, 0}, 1.0 / 60);
    CHECK(std::abs(wrap_angle(r.yaw() - kPi)) < 1e-4);
}

TEST_CASE("finite differences of positions and rotations") {
    std::vector<Vec3> constant(5, Vec3{1, 2, 3});
    auto v = finite_difference_positions(constant, 1.0 / 60);
    for (const auto& x : v) CHECK(x.norm() == 0.0);

    std::vector<Vec3> ramp = {{0, 0, 0}, {0, 0, 1.0 / 60}, {0, 0, 2.0 / 60}};
    v = finite_difference_positions(ramp, 1.0 / 60);
    CHECK(v.size() == 2);
    CHECK(v[0].z == doctest::Approx(1.0));
    CHECK(v[1].z == doctest::Approx(1.0));

    double step = kPi / 180.0;  // one degree per frame about x
    std::vector<Quat> rots;
    for (int i = 0; i < 10; ++i) rots.push_back(Quat::from_axis_angle({1, 0, 0}, step * i));
    auto w = finite_difference_rotations(rots, 1.0 / 60);
    for (const auto& x : w) {
        CHECK(std::abs(x.x - step * 60.0) < 1e-6);
        CHECK(std::abs(x.y) < 1e-9);
        CHECK(std::abs(x.z) < 1e-9);
    }

    CHECK_THROWS_AS(finite_difference_positions({{0, 0, 0}}, 1.0 / 60), Error);
}

TEST_CASE("root integration inverts root finite differences") {
    RngStream rng(5);
    double dt = 1.0 / 60;
    // random smooth yaw-only root trajectory
    int n = 120;
    std::vector<RootTransform> traj(static_cast<std::size_t>(n));
    double yaw = 0.3;
    Vec3 pos{0.5, 0, -0.2};
    for (int i = 0; i < n; ++i) {
        traj[std::size_t(i)] = RootTransform::from_yaw(yaw, pos);
        yaw += rng.uniform(-0.05, 0.05);
        pos = pos + Vec3{rng.uniform(-0.01, 0.01), 0, rng.uniform(-0.01, 0.01)};
    }
    // root-space velocities via finite differences
    RootTransform cur = traj[0];
    for (int i = 0; i + 1 < n; ++i) {
        Vec3 vp = traj[std::size_t(i)].to_root_dir(traj[std::size_t(i + 1)].position -
                                                   traj[std::size_t(i)].position) *
                  (1.0 / dt);
        Quat rel = (traj[std::size_t(i + 1)].orientation *
                    traj[std::size_t(i)].orientation.conjugated())
                       .normalized();
        Vec3 vr = scaled_angle_axis_from_quat(rel) * (1.0 / dt);
        cur = integrate_root(cur, vp, vr, dt);
        Vec3 dp = cur.position - traj[std::size_t(i + 1)].position;
        CHECK(dp.norm() < 1e-4);
        CHECK(std::abs(wrap_angle(cur.yaw() - traj[std::size_t(i + 1)].yaw())) < 1e-4);
    }
}

TEST_CASE("skeleton validation rejects malformed trees") {
    Skeleton s = two_joint_chain();
    s.parents = {-1, 1};  // self-parent: not topologically ordered
    CHECK_THROWS_AS(s.validate(), Error);
    s.parents = {0, 0};  // root must have parent -1
    CHECK_THROWS_AS(s.validate(), Error);
    s = two_joint_chain();
    s.mirror_map = {1, 0};
    s.names = {"LeftA", "RightA"};
    s.hips_name = "LeftA";
    s.spine2_name = "LeftA";
    s.head_name = "";
    s.validate();
    s.mirror_map = {1, 1};  // not an involution
    CHECK_THROWS_AS(s.validate(), Error);
}

TEST_CASE("metadata inference from names") {
    Skeleton s;
    s.names = {"Hips", "Spine", "Spine2", "Head", "LeftArm", "RightArm"};
    s.parents = {-1, 0, 1, 2, 2, 2};
    s.offsets.assign(6, Vec3{0, 0.1, 0});
    s.infer_metadata();
    CHECK(s.hips_name == "Hips");
    CHECK(s.spine2_name == "Spine2");
    CHECK(s.head_name == "Head");
    CHECK(s.mirror_map[4] == 5);
    CHECK(s.mirror_map[5] == 4);
    CHECK(s.mirror_map[0] == 0);
    s.validate();
}
