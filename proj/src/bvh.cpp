#include "zeggs/bvh.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace zeggs::motion {

namespace {

constexpr double kDegToRad = 3.14159265358979323846 / 180.0;
constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;

struct Token {
    std::string text;
    int line;
};

struct Tokenizer {
    std::vector<Token> tokens;
    std::size_t pos = 0;

    explicit Tokenizer(const std::string& text) {
        int line = 1;
        std::string cur;
        auto flush = [&]() {
            if (!cur.empty()) {
                tokens.push_back({cur, line});
                cur.clear();
            }
        };
        for (char c : text) {
            if (c == '\n') {
                flush();
                ++line;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                flush();
            } else if (c == '{' || c == '}' || c == ':') {
                flush();
                tokens.push_back({std::string(1, c), line});
            } else {
                cur.push_back(c);
            }
        }
        flush();
    }

    bool done() const { return pos >= tokens.size(); }
    const Token& peek() const {
        if (done()) fail(Errc::format, "BVH: unexpected end of file");
        return tokens[pos];
    }
    Token next() {
        Token t = peek();
        ++pos;
        return t;
    }
    void expect(const std::string& s) {
        Token t = next();
        if (t.text != s)
            fail(Errc::format, "BVH: expected \"" + s + "\" but found \"" + t.text + "\" at line " +
                                   std::to_string(t.line));
    }
    double number() {
        Token t = next();
        try {
            std::size_t used = 0;
            double v = std::stod(t.text, &used);
            if (used != t.text.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (...) {
            fail(Errc::format,
                 "BVH: expected a number but found \"" + t.text + "\" at line " + std::to_string(t.line));
        }
    }
};

struct JointChannels {
    std::string pos_axes;  // position channel axes in declared order
    std::string rot_axes;  // rotation channel axes in declared order
    std::string kinds;     // 'p'/'r' per declared channel
};

geom::Quat axis_quat(char axis, double rad) {
    switch (axis) {
        case 'X': return geom::Quat::from_axis_angle({1, 0, 0}, rad);
        case 'Y': return geom::Quat::from_axis_angle({0, 1, 0}, rad);
        default: return geom::Quat::from_axis_angle({0, 0, 1}, rad);
    }
}

void parse_joint(Tokenizer& tk, Skeleton& skel, std::vector<JointChannels>& channels, int parent) {
    Token name = tk.next();
    int index = int(skel.names.size());
    skel.names.push_back(name.text);
    skel.parents.push_back(parent);
    skel.offsets.push_back({0, 0, 0});
    skel.has_end_site.push_back(false);
    skel.end_site_offsets.push_back({0, 0, 0});
    channels.push_back({});

    tk.expect("{");
    while (true) {
        Token t = tk.next();
        if (t.text == "}") break;
        if (t.text == "OFFSET") {
            double x = tk.number(), y = tk.number(), z = tk.number();
            skel.offsets[std::size_t(index)] = {x, y, z};
        } else if (t.text == "CHANNELS") {
            int n = int(tk.number());
            JointChannels jc;
            for (int i = 0; i < n; ++i) {
                Token c = tk.next();
                if (c.text == "Xposition" || c.text == "Yposition" || c.text == "Zposition") {
                    jc.pos_axes.push_back(c.text[0]);
                    jc.kinds.push_back('p');
                } else if (c.text == "Xrotation" || c.text == "Yrotation" || c.text == "Zrotation") {
                    jc.rot_axes.push_back(c.text[0]);
                    jc.kinds.push_back('r');
                } else {
                    fail(Errc::format, "BVH: unknown channel \"" + c.text + "\" at line " +
                                           std::to_string(c.line));
                }
            }
            channels[std::size_t(index)] = jc;
        } else if (t.text == "JOINT") {
            parse_joint(tk, skel, channels, index);
        } else if (t.text == "End") {
            tk.expect("Site");
            tk.expect("{");
            tk.expect("OFFSET");
            double x = tk.number(), y = tk.number(), z = tk.number();
            skel.has_end_site[std::size_t(index)] = true;
            skel.end_site_offsets[std::size_t(index)] = {x, y, z};
            tk.expect("}");
        } else {
            fail(Errc::format,
                 "BVH: unexpected token \"" + t.text + "\" at line " + std::to_string(t.line));
        }
    }
}

}  // namespace

MotionClip parse_bvh(const std::string& text) {
    Tokenizer tk(text);
    tk.expect("HIERARCHY");
    tk.expect("ROOT");

    auto skeleton = std::make_shared<Skeleton>();
    std::vector<JointChannels> channels;
    parse_joint(tk, *skeleton, channels, -1);
    skeleton->infer_metadata();
    skeleton->validate();

    Token motion = tk.next();
    if (motion.text != "MOTION")
        fail(Errc::format, "BVH: expected MOTION section at line " + std::to_string(motion.line));
    tk.expect("Frames");
    tk.expect(":");
    int frames = int(tk.number());
    tk.expect("Frame");
    Token time_tok = tk.next();
    if (time_tok.text != "Time")
        fail(Errc::format, "BVH: expected \"Frame Time:\" at line " + std::to_string(time_tok.line));
    tk.expect(":");
    double frame_time = tk.number();
    if (frame_time <= 0) fail(Errc::format, "BVH: non-positive frame time");

    int j = skeleton->joint_count();
    int total_channels = 0;
    for (const auto& jc : channels) total_channels += int(jc.kinds.size());

    MotionClip clip;
    clip.skeleton = skeleton;
    clip.fps = 1.0 / frame_time;
    clip.poses.reserve(std::size_t(frames));
    for (int f = 0; f < frames; ++f) {
        SkeletonPose pose;
        pose.translations.resize(std::size_t(j));
        pose.rotations.resize(std::size_t(j));
        for (int ji = 0; ji < j; ++ji) {
            const JointChannels& jc = channels[std::size_t(ji)];
            geom::Vec3 pos{0, 0, 0};
            geom::Quat rot = geom::Quat::identity();
            std::size_t pi = 0, ri = 0;
            for (char kind : jc.kinds) {
                if (tk.done())
                    fail(Errc::format, "BVH: frame data ended early, expected " +
                                           std::to_string(frames) + " frames of " +
                                           std::to_string(total_channels) + " channels, found " +
                                           std::to_string(f) + " complete frames");
                double v = tk.number();
                if (kind == 'p') {
                    char axis = jc.pos_axes[pi++];
                    if (axis == 'X') pos.x = v;
                    if (axis == 'Y') pos.y = v;
                    if (axis == 'Z') pos.z = v;
                } else {
                    char axis = jc.rot_axes[ri++];
                    rot = rot * axis_quat(axis, v * kDegToRad);
                }
            }
            pose.translations[std::size_t(ji)] =
                jc.pos_axes.empty() ? skeleton->offsets[std::size_t(ji)] : pos;
            pose.rotations[std::size_t(ji)] = rot.normalized().canonicalized();
        }
        clip.poses.push_back(std::move(pose));
    }
    if (!tk.done()) {
        Token t = tk.peek();
        fail(Errc::format, "BVH: trailing data at line " + std::to_string(t.line) + ", expected " +
                               std::to_string(frames) + " frames of " +
                               std::to_string(total_channels) + " channels");
    }
    if (clip.frame_count() < 2) fail(Errc::format, "BVH: clip needs at least 2 frames");
    return clip;
}

namespace {

// ZXY euler decomposition: R = Rz(c) * Rx(a) * Ry(b), radians.
void quat_to_zxy(const geom::Quat& q, double& z, double& x, double& y) {
    geom::Mat3 mm = q.to_matrix();
    const auto& m = mm.m;
    double sa = std::max(-1.0, std::min(1.0, m[7]));
    x = std::asin(sa);
    if (std::abs(sa) < 1.0 - 1e-9) {
        y = std::atan2(-m[6], m[8]);
        z = std::atan2(-m[1], m[4]);
    } else {
        y = 0.0;
        z = std::atan2(m[3], m[0]);
    }
}

void write_joint(std::ostringstream& os, const Skeleton& s, int index, int depth) {
    std::string indent(std::size_t(depth) * 2, ' ');
    os << indent << (index == 0 ? "ROOT " : "JOINT ") << s.names[std::size_t(index)] << "\n";
    os << indent << "{\n";
    char buf[128];
    const auto& off = s.offsets[std::size_t(index)];
    std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f", off.x, off.y, off.z);
    os << indent << "  OFFSET " << buf << "\n";
    os << indent << "  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation\n";
    bool has_child = false;
    for (int c = index + 1; c < s.joint_count(); ++c)
        if (s.parents[std::size_t(c)] == index) {
            write_joint(os, s, c, depth + 1);
            has_child = true;
        }
    if (s.has_end_site[std::size_t(index)] || !has_child) {
        const auto& eo = s.end_site_offsets[std::size_t(index)];
        std::snprintf(buf, sizeof(buf), "%.6f %.6f %.6f", eo.x, eo.y, eo.z);
        os << indent << "  End Site\n" << indent << "  {\n";
        os << indent << "    OFFSET " << buf << "\n";
        os << indent << "  }\n";
    }
    os << indent << "}\n";
}

}  // namespace

std::string write_bvh(const MotionClip& clip) {
    const Skeleton& s = *clip.skeleton;
    std::ostringstream os;
    os << "HIERARCHY\n";
    write_joint(os, s, 0, 0);
    os << "MOTION\n";
    os << "Frames: " << clip.frame_count() << "\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.8f", 1.0 / clip.fps);
    os << "Frame Time: " << buf << "\n";
    for (const auto& pose : clip.poses) {
        bool first = true;
        for (int ji = 0; ji < s.joint_count(); ++ji) {
            double z, x, y;
            quat_to_zxy(pose.rotations[std::size_t(ji)], z, x, y);
            const auto& t = pose.translations[std::size_t(ji)];
            char line[256];
            std::snprintf(line, sizeof(line), "%.6f %.6f %.6f %.6f %.6f %.6f", t.x, t.y, t.z,
                          z * kRadToDeg, x * kRadToDeg, y * kRadToDeg);
            if (!first) os << " ";
            os << line;
            first = false;
        }
        os << "\n";
    }
    return os.str();
}

MotionClip read_bvh_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::io, "cannot open BVH file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    MotionClip clip = parse_bvh(ss.str());
    clip.source = path;
    return clip;
}

void write_bvh_file(const MotionClip& clip, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(Errc::io, "cannot write BVH file: " + path);
    out << write_bvh(clip);
}

}  // namespace zeggs::motion
