#include "zeggs/skeleton.hpp"

#include <algorithm>
#include <cctype>

#include "zeggs/binio.hpp"

namespace zeggs {

namespace {

std::string lower(const std::string& s) {
    std::string r = s;
    std::transform(r.begin(), r.end(), r.begin(), [](unsigned char c) { return char(std::tolower(c)); });
    return r;
}

}  // namespace

int Skeleton::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return int(i);
    return -1;
}

int Skeleton::require_joint(const std::string& name, const char* what) const {
    int idx = index_of(name);
    if (idx < 0)
        fail(Errc::config, std::string("skeleton metadata: ") + what + " joint \"" + name +
                               "\" not found");
    return idx;
}

void Skeleton::infer_metadata() {
    auto find_substr = [&](const std::string& needle) -> std::string {
        for (const auto& n : names)
            if (lower(n).find(needle) != std::string::npos) return n;
        return {};
    };
    if (hips_name.empty()) {
        hips_name = find_substr("hip");
        if (hips_name.empty()) hips_name = names.empty() ? "" : names[0];
    }
    if (spine2_name.empty()) {
        spine2_name = find_substr("spine2");
        if (spine2_name.empty()) spine2_name = find_substr("spine");
        if (spine2_name.empty()) spine2_name = hips_name;
    }
    if (head_name.empty()) head_name = find_substr("head");

    if (mirror_map.empty()) {
        mirror_map.assign(names.size(), -1);
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (mirror_map[i] >= 0) continue;
            std::string n = lower(names[i]);
            std::string other;
            if (n.rfind("left", 0) == 0)
                other = "right" + n.substr(4);
            else if (n.rfind("right", 0) == 0)
                other = "left" + n.substr(5);
            if (other.empty()) {
                mirror_map[i] = int(i);  // center joints map to themselves
                continue;
            }
            for (std::size_t k = 0; k < names.size(); ++k)
                if (lower(names[k]) == other) {
                    mirror_map[i] = int(k);
                    mirror_map[k] = int(i);
                    break;
                }
        }
    }
}

void Skeleton::validate() const {
    int j = joint_count();
    if (j == 0) fail(Errc::config, "skeleton has no joints");
    if (int(parents.size()) != j || int(offsets.size()) != j)
        fail(Errc::config, "skeleton arrays have inconsistent lengths");
    if (parents[0] != -1) fail(Errc::config, "skeleton joint 0 must be the root (parent -1)");
    for (int i = 1; i < j; ++i)
        if (parents[std::size_t(i)] < 0 || parents[std::size_t(i)] >= i)
            fail(Errc::config,
                 "skeleton parents must be topologically ordered (cycle or forward reference at joint " +
                     std::to_string(i) + ")");
    if (!mirror_map.empty()) {
        if (int(mirror_map.size()) != j) fail(Errc::config, "mirror map length mismatch");
        for (int i = 0; i < j; ++i) {
            int m = mirror_map[std::size_t(i)];
            if (m >= 0 && (m >= j || mirror_map[std::size_t(m)] != i))
                fail(Errc::config, "mirror map is not an involution at joint " + std::to_string(i));
        }
    }
    require_joint(hips_name, "hips");
    require_joint(spine2_name, "second spine");
    if (!head_name.empty()) require_joint(head_name, "head");
}

bool Skeleton::same_structure(const Skeleton& o) const {
    if (names != o.names || parents != o.parents) return false;
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        geom::Vec3 d = offsets[i] - o.offsets[i];
        if (d.norm() > 1e-9) return false;
    }
    return true;
}

void write_skeleton(std::ostream& os, const Skeleton& s) {
    binio::write_le<std::uint32_t>(os, std::uint32_t(s.joint_count()));
    for (int i = 0; i < s.joint_count(); ++i) {
        binio::write_string(os, s.names[std::size_t(i)]);
        binio::write_le<std::int32_t>(os, s.parents[std::size_t(i)]);
        const auto& o = s.offsets[std::size_t(i)];
        binio::write_le<double>(os, o.x);
        binio::write_le<double>(os, o.y);
        binio::write_le<double>(os, o.z);
        binio::write_le<std::uint8_t>(os, s.has_end_site[std::size_t(i)] ? 1 : 0);
        const auto& e = s.end_site_offsets[std::size_t(i)];
        binio::write_le<double>(os, e.x);
        binio::write_le<double>(os, e.y);
        binio::write_le<double>(os, e.z);
        binio::write_le<std::int32_t>(os, s.mirror_map.empty() ? -1 : s.mirror_map[std::size_t(i)]);
    }
    binio::write_string(os, s.hips_name);
    binio::write_string(os, s.spine2_name);
    binio::write_string(os, s.head_name);
}

Skeleton read_skeleton(std::istream& is) {
    Skeleton s;
    auto j = binio::read_le<std::uint32_t>(is);
    s.mirror_map.resize(j);
    for (std::uint32_t i = 0; i < j; ++i) {
        s.names.push_back(binio::read_string(is));
        s.parents.push_back(binio::read_le<std::int32_t>(is));
        geom::Vec3 o;
        o.x = binio::read_le<double>(is);
        o.y = binio::read_le<double>(is);
        o.z = binio::read_le<double>(is);
        s.offsets.push_back(o);
        s.has_end_site.push_back(binio::read_le<std::uint8_t>(is) != 0);
        geom::Vec3 e;
        e.x = binio::read_le<double>(is);
        e.y = binio::read_le<double>(is);
        e.z = binio::read_le<double>(is);
        s.end_site_offsets.push_back(e);
        s.mirror_map[i] = binio::read_le<std::int32_t>(is);
    }
    s.hips_name = binio::read_string(is);
    s.spine2_name = binio::read_string(is);
    s.head_name = binio::read_string(is);
    return s;
}

SkeletonPose SkeletonPose::rest(const Skeleton& s) {
    SkeletonPose p;
    p.translations = s.offsets;
    p.rotations.assign(s.names.size(), geom::Quat::identity());
    return p;
}

namespace geom {

std::vector<JointTransform> forward_kinematics(const Skeleton& skeleton, const SkeletonPose& pose,
                                               const RootTransform& root) {
    int j = skeleton.joint_count();
    if (int(pose.translations.size()) != j || int(pose.rotations.size()) != j)
        fail(Errc::shape, "pose joint count does not match skeleton");
    std::vector<JointTransform> world(static_cast<std::size_t>(j));
    for (int i = 0; i < j; ++i) {
        const Quat& lr = pose.rotations[std::size_t(i)];
        const Vec3& lt = pose.translations[std::size_t(i)];
        if (i == 0) {
            world[0].rotation = (root.orientation * lr).normalized();
            world[0].position = root.position + root.orientation.rotate(lt);
        } else {
            const JointTransform& p = world[std::size_t(skeleton.parents[std::size_t(i)])];
            world[std::size_t(i)].rotation = (p.rotation * lr).normalized();
            world[std::size_t(i)].position = p.position + p.rotation.rotate(lt);
        }
    }
    return world;
}

RootTransform compute_root(const Skeleton& skeleton, const std::vector<JointTransform>& world,
                           const RootTransform* previous) {
    int spine2 = skeleton.spine2_index();
    int hips = skeleton.hips_index();
    RootTransform root;
    root.position = world[std::size_t(spine2)].position;
    root.position.y = 0;
    Vec3 hip_z = world[std::size_t(hips)].rotation.rotate({0, 0, 1});
    Vec2 proj{hip_z.x, hip_z.z};
    if (proj.norm() < 1e-4) {
        if (!previous)
            fail(Errc::numeric, "root orientation degenerate on first frame (hip z-axis vertical)");
        root.orientation = previous->orientation;
    } else {
        root.orientation = Quat::from_yaw(std::atan2(proj.x, proj.z));
    }
    return root;
}

}  // namespace geom
}  // namespace zeggs
