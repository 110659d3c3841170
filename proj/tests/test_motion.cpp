#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "synthetic.hpp"
#include "zeggs/bvh.hpp"
#include "zeggs/cache.hpp"
#include "zeggs/motion.hpp"
#include "zeggs/rng.hpp"

using namespace zeggs;
using geom::Quat;
using geom::Vec3;

namespace {

constexpr double kPi = 3.14159265358979323846;

const char* kMinimalBvh = R"(HIERARCHY
ROOT Hips
{
  OFFSET 0.0 0.0 0.0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  JOINT Head
  {
    OFFSET 0.0 0.5 0.0
    CHANNELS 3 Zrotation Xrotation Yrotation
    End Site
    {
      OFFSET 0.0 0.2 0.0
    }
  }
}
MOTION
Frames: 2
Frame Time: 0.0166667
0 1 0 0 0 0 0 0 0
0 1 0 0 0 0 0 0 0
)";

std::string scratch_dir() {
    auto dir = std::filesystem::temp_directory_path() / "zeggs_motion_test";
    std::filesystem::create_directories(dir);
    return dir.string();
}

}  // namespace

TEST_CASE("parse minimal BVH") {
    MotionClip clip = motion::parse_bvh(kMinimalBvh);
    CHECK(clip.skeleton->joint_count() == 2);
    CHECK(clip.frame_count() == 2);
    CHECK(clip.fps == doctest::Approx(60.0).epsilon(1e-3));
    for (const auto& pose : clip.poses) {
        CHECK(pose.rotations[0].w == doctest::Approx(1.0));
        CHECK(pose.rotations[1].w == doctest::Approx(1.0));
        CHECK(pose.translations[0].y == doctest::Approx(1.0));
        CHECK(pose.translations[1].y == doctest::Approx(0.5));  // offset used, no pos channels
    }
    CHECK(clip.skeleton->has_end_site[1]);
}

TEST_CASE("write-parse round trip is a fixed point") {
    MotionClip clip = synth::make_clip("high", 2.0, 7);
    std::string text1 = motion::write_bvh(clip);
    MotionClip once = motion::parse_bvh(text1);
    MotionClip twice = motion::parse_bvh(motion::write_bvh(once));

    // Channels survive every round within 1e-4 degrees (1.75e-6 rad).
    constexpr double kTol = 1e-4 * kPi / 180.0;
    auto compare = [&](const MotionClip& a, const MotionClip& b, double rot_tol) {
        REQUIRE(a.frame_count() == b.frame_count());
        for (int f = 0; f < a.frame_count(); ++f)
            for (int j = 0; j < a.skeleton->joint_count(); ++j) {
                const Quat& qa = a.poses[std::size_t(f)].rotations[std::size_t(j)];
                const Quat& qb = b.poses[std::size_t(f)].rotations[std::size_t(j)];
                double dot = std::min(1.0, std::abs(qa.dot(qb)));
                CHECK(2.0 * std::acos(dot) < rot_tol);
                Vec3 dt = a.poses[std::size_t(f)].translations[std::size_t(j)] -
                          b.poses[std::size_t(f)].translations[std::size_t(j)];
                CHECK(dt.norm() < 1e-5);
            }
    };
    compare(clip, once, 10 * kTol);   // one write quantizes at 1e-6 degrees
    compare(once, twice, kTol);       // after that the representation is stable
}

TEST_CASE("BVH errors carry context") {
    std::string bad = kMinimalBvh;
    bad.replace(bad.find("Frames: 2"), 9, "Frames: 3");
    try {
        motion::parse_bvh(bad);
        FAIL("expected parse error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::format);
        CHECK(std::string(e.what()).find("3") != std::string::npos);  // expected frames
        CHECK(std::string(e.what()).find("2") != std::string::npos);  // found frames
    }

    try {
        motion::parse_bvh("HIERARCHY\nROOT Hips\n{\n  OFFSET 0 0 bad\n}\n");
        FAIL("expected parse error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("line 4") != std::string::npos);
    }
}

TEST_CASE("mirror is an exact involution and swaps sides") {
    MotionClip clip = synth::make_clip("low", 1.5, 3);
    MotionClip m = motion::mirror_clip(clip);
    MotionClip mm = motion::mirror_clip(m);
    REQUIRE(mm.frame_count() == clip.frame_count());
    for (int f = 0; f < clip.frame_count(); ++f)
        for (int j = 0; j < clip.skeleton->joint_count(); ++j) {
            const auto& pa = clip.poses[std::size_t(f)];
            const auto& pb = mm.poses[std::size_t(f)];
            CHECK(pa.translations[std::size_t(j)].x == pb.translations[std::size_t(j)].x);
            CHECK(pa.rotations[std::size_t(j)].w == pb.rotations[std::size_t(j)].w);
            CHECK(pa.rotations[std::size_t(j)].x == pb.rotations[std::size_t(j)].x);
            CHECK(pa.rotations[std::size_t(j)].y == pb.rotations[std::size_t(j)].y);
            CHECK(pa.rotations[std::size_t(j)].z == pb.rotations[std::size_t(j)].z);
        }

    // Rotating only the left wrist shows up on the right wrist after mirroring.
    auto skeleton = synth::make_skeleton();
    MotionClip wrist;
    wrist.skeleton = skeleton;
    wrist.fps = 60;
    wrist.poses.assign(2, SkeletonPose::rest(*skeleton));
    int lh = skeleton->index_of("LeftHand");
    int rh = skeleton->index_of("RightHand");
    wrist.poses[0].rotations[std::size_t(lh)] = Quat::from_axis_angle({0, 0, 1}, 0.4);
    wrist.poses[1] = wrist.poses[0];
    MotionClip wm = motion::mirror_clip(wrist);
    CHECK(std::abs(wm.poses[0].rotations[std::size_t(rh)].z) > 1e-3);
    CHECK(wm.poses[0].rotations[std::size_t(lh)].w == doctest::Approx(1.0));
}

TEST_CASE("mirrored world positions are the x-reflection of the original") {
    MotionClip clip = synth::make_clip("high", 1.0, 11);
    MotionClip m = motion::mirror_clip(clip);
    for (int f = 0; f < clip.frame_count(); f += 7) {
        auto wa = geom::forward_kinematics(*clip.skeleton, clip.poses[std::size_t(f)],
                                           geom::RootTransform{});
        auto wb = geom::forward_kinematics(*m.skeleton, m.poses[std::size_t(f)],
                                           geom::RootTransform{});
        const auto& mm = clip.skeleton->mirror_map;
        for (int j = 0; j < clip.skeleton->joint_count(); ++j) {
            const Vec3& a = wa[std::size_t(j)].position;
            const Vec3& b = wb[std::size_t(mm[std::size_t(j)])].position;
            CHECK(std::abs(-a.x - b.x) < 1e-5);
            CHECK(std::abs(a.y - b.y) < 1e-5);
            CHECK(std::abs(a.z - b.z) < 1e-5);
        }
    }
}

TEST_CASE("mirror requires a complete mirror map") {
    MotionClip clip = synth::make_clip("low", 0.5, 1);
    auto broken = std::make_shared<Skeleton>(*clip.skeleton);
    broken->mirror_map[3] = -1;
    clip.skeleton = broken;
    CHECK_THROWS_AS(motion::mirror_clip(clip), Error);
}

TEST_CASE("resample_clip") {
    MotionClip clip = synth::make_clip("high", 2.0, 5);
    MotionClip same = motion::resample_clip(clip, 1.0);
    REQUIRE(same.frame_count() == clip.frame_count());
    for (int f = 0; f < clip.frame_count(); ++f)
        CHECK(same.poses[std::size_t(f)].translations[0].x ==
              clip.poses[std::size_t(f)].translations[0].x);

    // 100-frame linear motion at factor 2 covers the same spatial path.
    auto skeleton = synth::make_skeleton();
    MotionClip lin;
    lin.skeleton = skeleton;
    lin.fps = 60;
    for (int f = 0; f < 100; ++f) {
        SkeletonPose p = SkeletonPose::rest(*skeleton);
        p.translations[0] = {0, 1, f * 0.01};
        lin.poses.push_back(p);
    }
    MotionClip fast = motion::resample_clip(lin, 2.0);
    CHECK(fast.frame_count() == 50);
    CHECK(fast.poses.front().translations[0].z == doctest::Approx(0.0));
    CHECK(fast.poses.back().translations[0].z == doctest::Approx(0.99));

    MotionClip back = motion::resample_clip(fast, 0.5);
    CHECK(back.frame_count() == 100);
    for (int f = 0; f < 100; ++f)
        CHECK(std::abs(back.poses[std::size_t(f)].translations[0].z -
                       lin.poses[std::size_t(f)].translations[0].z) < 1e-3);

    CHECK_THROWS_AS(motion::resample_clip(lin, 0.1), Error);
}

TEST_CASE("style features of a static clip") {
    auto skeleton = synth::make_skeleton();
    MotionClip still;
    still.skeleton = skeleton;
    still.fps = 60;
    still.poses.assign(5, SkeletonPose::rest(*skeleton));
    for (auto& p : still.poses) p.translations[0] = {0, 0.95, 0};
    FeatureMatrix a = motion::extract_style_features(still);
    int j = skeleton->joint_count();
    CHECK(a.cols == 15 * j + 6);
    // velocity blocks and root velocities are zero
    for (int f = 0; f < a.rows; ++f)
        for (int c = 9 * j; c < a.cols; ++c)
            if (c < 15 * j || c >= 15 * j)
                CHECK(std::abs(a.at(f, c)) < 1e-12);
    // translation block: hips in root space (vertical only), others rest offsets
    for (int f = 0; f < a.rows; ++f) {
        CHECK(a.at(f, 0) == doctest::Approx(0.0));
        CHECK(a.at(f, 1) == doctest::Approx(0.95));
        CHECK(a.at(f, 2) == doctest::Approx(0.0));
        for (int ji = 1; ji < j; ++ji) {
            CHECK(a.at(f, 3 * ji) == doctest::Approx(skeleton->offsets[std::size_t(ji)].x));
            CHECK(a.at(f, 3 * ji + 1) == doctest::Approx(skeleton->offsets[std::size_t(ji)].y));
        }
    }
}

TEST_CASE("feature widths match the paper skeleton arithmetic") {
    CHECK(motion::style_feature_width(75) == 1131);
    CHECK(motion::pose_state_width(75) == 1138);
}

TEST_CASE("constant forward motion shows up in root velocity") {
    auto skeleton = synth::make_skeleton();
    MotionClip clip;
    clip.skeleton = skeleton;
    clip.fps = 60;
    double speed = 0.7;  // m/s along +z
    for (int f = 0; f < 30; ++f) {
        SkeletonPose p = SkeletonPose::rest(*skeleton);
        p.translations[0] = {0, 0.95, speed * f / 60.0};
        clip.poses.push_back(p);
    }
    FeatureMatrix a = motion::extract_style_features(clip);
    int j = skeleton->joint_count();
    for (int f = 0; f < a.rows; ++f) {
        CHECK(std::abs(a.at(f, 15 * j + 0)) < 1e-9);
        CHECK(std::abs(a.at(f, 15 * j + 1)) < 1e-9);
        CHECK(a.at(f, 15 * j + 2) == doctest::Approx(speed).epsilon(1e-6));
    }
}

TEST_CASE("pose states: widths, unit quaternions, static root") {
    auto skeleton = synth::make_skeleton();
    MotionClip still;
    still.skeleton = skeleton;
    still.fps = 60;
    still.poses.assign(4, SkeletonPose::rest(*skeleton));
    for (auto& p : still.poses) p.translations[0] = {0.4, 0.95, -0.3};
    FeatureMatrix y = motion::extract_pose_states(still);
    int j = skeleton->joint_count();
    CHECK(y.cols == 15 * j + 13);
    for (int f = 0; f < y.rows; ++f) {
        CHECK(y.at(f, 15 * j + 0) == doctest::Approx(0.4));
        CHECK(y.at(f, 15 * j + 1) == doctest::Approx(0.0));
        CHECK(y.at(f, 15 * j + 2) == doctest::Approx(-0.3));
        double qw = y.at(f, 15 * j + 3), qx = y.at(f, 15 * j + 4);
        double qy = y.at(f, 15 * j + 5), qz = y.at(f, 15 * j + 6);
        CHECK(std::abs(std::sqrt(qw * qw + qx * qx + qy * qy + qz * qz) - 1.0) < 1e-6);
        CHECK(qw == doctest::Approx(1.0));  // identity root orientation
    }
}

TEST_CASE("re-integrating extracted root velocities reconstructs the root track") {
    MotionClip clip = synth::make_clip("high", 2.0, 21);
    FeatureMatrix y = motion::extract_pose_states(clip);
    int j = clip.skeleton->joint_count();
    geom::RootTransform root;
    root.position = {y.at(0, 15 * j), y.at(0, 15 * j + 1), y.at(0, 15 * j + 2)};
    root.orientation = Quat{y.at(0, 15 * j + 3), y.at(0, 15 * j + 4), y.at(0, 15 * j + 5),
                            y.at(0, 15 * j + 6)};
    for (int f = 0; f + 1 < y.rows; ++f) {
        Vec3 vp{y.at(f, 15 * j + 7), y.at(f, 15 * j + 8), y.at(f, 15 * j + 9)};
        Vec3 vr{y.at(f, 15 * j + 10), y.at(f, 15 * j + 11), y.at(f, 15 * j + 12)};
        root = geom::integrate_root(root, vp, vr, 1.0 / clip.fps);
        Vec3 expect{y.at(f + 1, 15 * j), y.at(f + 1, 15 * j + 1), y.at(f + 1, 15 * j + 2)};
        CHECK((root.position - expect).norm() < 1e-3);
        Quat eq{y.at(f + 1, 15 * j + 3), y.at(f + 1, 15 * j + 4), y.at(f + 1, 15 * j + 5),
                y.at(f + 1, 15 * j + 6)};
        CHECK(std::abs(root.orientation.canonicalized().dot(eq)) > 1.0 - 1e-5);
    }
}

TEST_CASE("pose_states_to_clip inverts extract_pose_states") {
    MotionClip clip = synth::make_clip("low", 1.0, 9);
    FeatureMatrix y = motion::extract_pose_states(clip);
    MotionClip back = motion::pose_states_to_clip(y, clip.skeleton, clip.fps);
    for (int f = 0; f < clip.frame_count(); ++f) {
        for (int j = 0; j < clip.skeleton->joint_count(); ++j) {
            Vec3 d = back.poses[std::size_t(f)].translations[std::size_t(j)] -
                     clip.poses[std::size_t(f)].translations[std::size_t(j)];
            CHECK(d.norm() < 1e-9);
            double dot = std::abs(back.poses[std::size_t(f)].rotations[std::size_t(j)].dot(
                clip.poses[std::size_t(f)].rotations[std::size_t(j)]));
            CHECK(dot > 1.0 - 1e-9);
        }
    }
}

TEST_CASE("target facing") {
    auto skeleton = synth::make_skeleton();
    MotionClip clip;
    clip.skeleton = skeleton;
    clip.fps = 60;
    clip.poses.assign(9, SkeletonPose::rest(*skeleton));
    geom::Vec2 f = motion::compute_target_facing(clip);
    CHECK(f.x == doctest::Approx(0.0));
    CHECK(f.z == doctest::Approx(1.0));

    // head yawing uniformly in [-10, 10] degrees stays within a degree of +z
    for (int i = 0; i < 9; ++i) {
        double yaw = (-10.0 + 20.0 * i / 8.0) * kPi / 180.0;
        clip.poses[std::size_t(i)].rotations[2] = Quat::from_yaw(yaw);
    }
    f = motion::compute_target_facing(clip);
    CHECK(std::abs(std::atan2(f.x, f.z)) < kPi / 180.0);

    // a single reversed head does not flip the median direction
    clip.poses[4].rotations[2] = Quat::from_yaw(kPi);
    f = motion::compute_target_facing(clip);
    CHECK(f.z > 0.99);
}

TEST_CASE("normalization statistics") {
    FeatureMatrix m(100, 3);
    RngStream rng(2);
    for (int r = 0; r < 100; ++r) {
        m.at(r, 0) = rng.normal() * 2.0 + 5.0;
        m.at(r, 1) = 7.0;  // constant dimension
        m.at(r, 2) = rng.normal() * 0.1;
    }
    FeatureStats stats = motion::fit_normalization({&m});
    CHECK(stats.stdev[1] == doctest::Approx(1e-4));  // floored

    FeatureMatrix n = m;
    motion::normalize_rows(n, stats);
    double mu0 = 0, var0 = 0;
    for (int r = 0; r < 100; ++r) mu0 += n.at(r, 0);
    mu0 /= 100;
    for (int r = 0; r < 100; ++r) var0 += (n.at(r, 0) - mu0) * (n.at(r, 0) - mu0);
    var0 /= 100;
    CHECK(std::abs(mu0) < 1e-9);
    CHECK(var0 == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(n.at(0, 1) == doctest::Approx(0.0));

    motion::denormalize_rows(n, stats);
    for (int r = 0; r < 100; ++r)
        for (int c = 0; c < 3; ++c) CHECK(n.at(r, c) == doctest::Approx(m.at(r, c)).epsilon(1e-9));
}

TEST_CASE("prepare_dataset + cache round trip") {
    std::string dir = scratch_dir();
    synth::write_clip_files(dir, "clip_a", "high", 3.0, 101);
    synth::write_clip_files(dir, "clip_b", "low", 3.0, 202);
    synth::write_manifest(dir, "manifest.json",
                          {{"clip_a", "high", "train"}, {"clip_b", "low", "heldout"}});

    Manifest manifest = load_manifest(dir + "/manifest.json");
    PrepareReport report;
    DatasetCache cache = prepare_dataset(manifest, dir, &report);

    // mirroring doubles the clip count exactly
    CHECK(cache.clips.size() == 4);
    CHECK(report.clip_count == 4);
    CHECK(report.style_count == 2);
    CHECK(report.total_minutes == doctest::Approx(6.0 / 60.0).epsilon(0.02));
    CHECK(cache.split_indices(true).size() == 2);
    CHECK(cache.split_indices(false).size() == 2);
    CHECK(cache.find_clip("clip_a|M") >= 0);
    CHECK(cache.stats.pose.width() == motion::pose_state_width(7));
    CHECK(cache.stats.speech.width() == 81);

    std::string cache_path = dir + "/test.zegm";
    cache.save(cache_path);
    DatasetCache loaded = DatasetCache::load(cache_path);
    CHECK(loaded.clips.size() == cache.clips.size());
    CHECK(loaded.skeleton.same_structure(cache.skeleton));
    CHECK(loaded.fps == cache.fps);
    for (std::size_t i = 0; i < cache.clips.size(); ++i) {
        CHECK(loaded.clips[i].id == cache.clips[i].id);
        CHECK(loaded.clips[i].speech.rows == cache.clips[i].speech.rows);
        // float payloads survive the container bit-exactly
        CHECK(float(loaded.clips[i].clip.poses[5].rotations[3].w) ==
              float(cache.clips[i].clip.poses[5].rotations[3].w));
    }

    // missing file produces an io error
    synth::write_manifest(dir, "bad.json", {{"missing", "high", "train"}});
    CHECK_THROWS_AS(prepare_dataset(load_manifest(dir + "/bad.json"), dir, nullptr), Error);
}

TEST_CASE("speech features align with stretched motion frame counts") {
    // speech features for a time-stretched sequence align with the stretched
    // motion frame-for-frame (feature-domain scaling)
    audio::Waveform wav = synth::make_audio(2.0, 5);
    FeatureMatrix feats = audio::speech_features(wav);
    MotionClip clip = synth::make_clip("high", 2.0, 5);
    MotionClip stretched = motion::resample_clip(clip, 0.9);
    FeatureMatrix scaled = audio::scale_feature_rows(feats, stretched.frame_count());
    CHECK(scaled.rows == stretched.frame_count());
    CHECK(scaled.cols == 81);
}
