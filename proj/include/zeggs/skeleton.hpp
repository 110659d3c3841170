#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "zeggs/geom.hpp"

namespace zeggs {

// Kinematic tree plus the metadata the feature pipeline needs: the hips,
// second-spine and head joints, and the left/right mirror pairing.
struct Skeleton {
    std::vector<std::string> names;
    std::vector<int> parents;           // parents[0] == -1; parents[i] < i
    std::vector<geom::Vec3> offsets;    // rest offsets, meters
    std::vector<bool> has_end_site;
    std::vector<geom::Vec3> end_site_offsets;

    std::string hips_name, spine2_name, head_name;
    std::vector<int> mirror_map;  // involution over joint indices

    int joint_count() const { return int(names.size()); }
    int index_of(const std::string& name) const;  // -1 when absent
    int require_joint(const std::string& name, const char* what) const;
    int hips_index() const { return require_joint(hips_name, "hips"); }
    int spine2_index() const { return require_joint(spine2_name, "second spine"); }
    int head_index() const { return require_joint(head_name, "head"); }

    // Fills hips/spine2/head names and the mirror map from joint-name
    // heuristics (Left*/Right* prefixes, name substrings) when not already set.
    void infer_metadata();

    // Tree shape, metadata joints, mirror involution. Throws on violation.
    void validate() const;

    bool same_structure(const Skeleton& o) const;
};

// Per-frame pose: local rotations for every joint and local translations
// (joint 0 carries the character position of the hips; for the other joints
// the translation is usually the constant rest offset).
struct SkeletonPose {
    std::vector<geom::Vec3> translations;
    std::vector<geom::Quat> rotations;

    static SkeletonPose rest(const Skeleton& s);
};

void write_skeleton(std::ostream& os, const Skeleton& s);
Skeleton read_skeleton(std::istream& is);

namespace geom {

struct JointTransform {
    Quat rotation;
    Vec3 position;
};

// World transform of each joint: parent world transform composed with the
// local translation and rotation; the root joint is composed with `root`.
std::vector<JointTransform> forward_kinematics(const Skeleton& skeleton, const SkeletonPose& pose,
                                               const RootTransform& root);

// Root position: second spine joint projected on the ground. Root
// orientation: yaw aligning +z with the ground-projected z-axis of the hips.
// A near-vertical hip z-axis falls back to `previous` (error when absent).
RootTransform compute_root(const Skeleton& skeleton, const std::vector<JointTransform>& world,
                           const RootTransform* previous = nullptr);

}  // namespace geom
}  // namespace zeggs
