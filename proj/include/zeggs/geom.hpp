#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "zeggs/errors.hpp"

// Rotation representations, root-transform algebra and velocities.
// Conventions: y-up, meters, right-handed, character forward = +z.
// Ground-plane directions are 2D (x, z) pairs.
namespace zeggs::geom {

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(x * x + y * y + z * z); }
    Vec3 normalized() const;
};

struct Vec2 {
    double x = 0, z = 0;
    double norm() const { return std::sqrt(x * x + z * z); }
    Vec2 normalized() const;
};

// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return {}; }
    Mat3 operator*(const Mat3& o) const;
    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    Mat3 transposed() const;
    double det() const;
    Vec3 col(int i) const { return {m[std::size_t(i)], m[std::size_t(3 + i)], m[std::size_t(6 + i)]}; }
};

// Unit quaternion (w, x, y, z).
struct Quat {
    double w = 1, x = 0, y = 0, z = 0;

    static Quat identity() { return {}; }
    static Quat from_axis_angle(const Vec3& unit_axis, double angle);
    static Quat from_yaw(double angle) { return {std::cos(angle / 2), 0, std::sin(angle / 2), 0}; }
    static Quat from_matrix(const Mat3& m);

    Quat operator*(const Quat& o) const;
    Quat conjugated() const { return {w, -x, -y, -z}; }
    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
    Quat normalized() const;
    // Hemisphere convention: w >= 0 (ties broken on x, then y, then z).
    Quat canonicalized() const;
    Vec3 rotate(const Vec3& v) const;
    Mat3 to_matrix() const;
    double dot(const Quat& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }
};

// Normalized linear interpolation with hemisphere correction.
Quat nlerp(const Quat& a, const Quat& b, double t);

// First two columns of a rotation matrix, stored (col0, col1).
using TwoAxisRotation = std::array<double, 6>;

TwoAxisRotation two_axis_from_matrix(const Mat3& r);
// Gram-Schmidt orthonormalization, then cross product for the third column.
// Degenerate (zero or parallel) columns raise a numeric error.
Mat3 matrix_from_two_axis(const TwoAxisRotation& t);
TwoAxisRotation two_axis_from_quat(const Quat& q);
Quat quat_from_two_axis(const TwoAxisRotation& t);

// Axis times angle, radians; zero vector is the identity rotation and the
// magnitude is in [0, pi] for canonical quaternions.
Vec3 scaled_angle_axis_from_quat(const Quat& q);
Quat quat_from_scaled_angle_axis(const Vec3& v);

// Ground-plane position plus yaw-only orientation.
struct RootTransform {
    Vec3 position{0, 0, 0};
    Quat orientation = Quat::identity();

    static RootTransform from_yaw(double yaw, const Vec3& pos = {0, 0, 0}) {
        return {pos, Quat::from_yaw(yaw)};
    }
    double yaw() const;
    // Orientation axis must be vertical; checked within 1e-5.
    void check_valid() const;

    Vec3 to_root_dir(const Vec3& v) const { return orientation.conjugated().rotate(v); }
    Vec3 from_root_dir(const Vec3& v) const { return orientation.rotate(v); }
    Vec3 to_root_point(const Vec3& p) const { return orientation.conjugated().rotate(p - position); }
    Vec3 from_root_point(const Vec3& p) const { return position + orientation.rotate(p); }
    Vec2 facing() const {
        Vec3 f = orientation.rotate({0, 0, 1});
        return {f.x, f.z};
    }
};

// position += rotate(vp, orientation) * dt; orientation composed with the yaw
// component of exp(vr * dt). Zero velocities leave the root unchanged exactly.
RootTransform integrate_root(const RootTransform& root, const Vec3& vp, const Vec3& vr, double dt);

// Yaw angle of the twist (about +y) of exp(w * dt).
double yaw_of_angular_velocity(const Vec3& w, double dt);

// Forward differences divided by dt; output length = input length - 1.
std::vector<Vec3> finite_difference_positions(const std::vector<Vec3>& p, double dt);
// Relative rotation per frame converted to scaled angle-axis divided by dt.
std::vector<Vec3> finite_difference_rotations(const std::vector<Quat>& q, double dt);

}  // namespace zeggs::geom
