#pragma once

#include <string>

#include "zeggs/motion.hpp"

namespace zeggs::motion {

// BVH text -> MotionClip. Rotations are converted to quaternions using each
// joint's declared Euler channel order; fps comes from "Frame Time". Parse
// errors carry the offending line number.
MotionClip parse_bvh(const std::string& text);

// MotionClip -> BVH text. Every joint is written with six channels
// (Xposition Yposition Zposition Zrotation Xrotation Yrotation, i.e. ZXY
// rotation order), so parse(write(parse(x))) is a fixed point.
std::string write_bvh(const MotionClip& clip);

MotionClip read_bvh_file(const std::string& path);
void write_bvh_file(const MotionClip& clip, const std::string& path);

}  // namespace zeggs::motion
