#include "zeggs/geom.hpp"

namespace zeggs::geom {

Vec3 Vec3::normalized() const {
    double n = norm();
    if (n < 1e-12) fail(Errc::numeric, "cannot normalize near-zero vector");
    return {x / n, y / n, z / n};
}

Vec2 Vec2::normalized() const {
    double n = norm();
    if (n < 1e-12) fail(Errc::numeric, "cannot normalize near-zero direction");
    return {x / n, z / n};
}

Mat3 Mat3::operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0;
            for (int k = 0; k < 3; ++k) acc += m[std::size_t(i * 3 + k)] * o.m[std::size_t(k * 3 + j)];
            r.m[std::size_t(i * 3 + j)] = acc;
        }
    return r;
}

Mat3 Mat3::transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r.m[std::size_t(i * 3 + j)] = m[std::size_t(j * 3 + i)];
    return r;
}

double Mat3::det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Quat Quat::from_axis_angle(const Vec3& unit_axis, double angle) {
    double h = angle / 2;
    double s = std::sin(h);
    return {std::cos(h), unit_axis.x * s, unit_axis.y * s, unit_axis.z * s};
}

Quat Quat::operator*(const Quat& o) const {
    return {w * o.w - x * o.x - y * o.y - z * o.z, w * o.x + x * o.w + y * o.z - z * o.y,
            w * o.y - x * o.z + y * o.w + z * o.x, w * o.z + x * o.y - y * o.x + z * o.w};
}

Quat Quat::normalized() const {
    double n = norm();
    if (n < 1e-12) fail(Errc::numeric, "cannot normalize near-zero quaternion");
    return {w / n, x / n, y / n, z / n};
}

Quat Quat::canonicalized() const {
    bool flip = w < 0 || (w == 0 && (x < 0 || (x == 0 && (y < 0 || (y == 0 && z < 0)))));
    return flip ? Quat{-w, -x, -y, -z} : *this;
}

Vec3 Quat::rotate(const Vec3& v) const {
    Vec3 u{x, y, z};
    Vec3 t = u.cross(v) * 2.0;
    return v + t * w + u.cross(t);
}

Mat3 Quat::to_matrix() const {
    Mat3 r;
    double xx = x * x, yy = y * y, zz = z * z;
    double xy = x * y, xz = x * z, yz = y * z;
    double wx = w * x, wy = w * y, wz = w * z;
    r.m = {1 - 2 * (yy + zz), 2 * (xy - wz),     2 * (xz + wy),
           2 * (xy + wz),     1 - 2 * (xx + zz), 2 * (yz - wx),
           2 * (xz - wy),     2 * (yz + wx),     1 - 2 * (xx + yy)};
    return r;
}

Quat Quat::from_matrix(const Mat3& mm) {
    const auto& m = mm.m;
    double tr = m[0] + m[4] + m[8];
    Quat q;
    if (tr > 0) {
        double s = std::sqrt(tr + 1.0) * 2;
        q = {0.25 * s, (m[7] - m[5]) / s, (m[2] - m[6]) / s, (m[3] - m[1]) / s};
    } else if (m[0] > m[4] && m[0] > m[8]) {
        double s = std::sqrt(1.0 + m[0] - m[4] - m[8]) * 2;
        q = {(m[7] - m[5]) / s, 0.25 * s, (m[1] + m[3]) / s, (m[2] + m[6]) / s};
    } else if (m[4] > m[8]) {
        double s = std::sqrt(1.0 + m[4] - m[0] - m[8]) * 2;
        q = {(m[2] - m[6]) / s, (m[1] + m[3]) / s, 0.25 * s, (m[5] + m[7]) / s};
    } else {
        double s = std::sqrt(1.0 + m[8] - m[0] - m[4]) * 2;
        q = {(m[3] - m[1]) / s, (m[2] + m[6]) / s, (m[5] + m[7]) / s, 0.25 * s};
    }
    return q.normalized().canonicalized();
}

Quat nlerp(const Quat& a, const Quat& b, double t) {
    Quat bb = (a.dot(b) < 0) ? Quat{-b.w, -b.x, -b.y, -b.z} : b;
    Quat r{a.w + (bb.w - a.w) * t, a.x + (bb.x - a.x) * t, a.y + (bb.y - a.y) * t,
           a.z + (bb.z - a.z) * t};
    return r.normalized();
}

TwoAxisRotation two_axis_from_matrix(const Mat3& r) {
    return {r.m[0], r.m[3], r.m[6], r.m[1], r.m[4], r.m[7]};
}

Mat3 matrix_from_two_axis(const TwoAxisRotation& t) {
    Vec3 a{t[0], t[1], t[2]};
    Vec3 b{t[3], t[4], t[5]};
    if (a.norm() < 1e-8) fail(Errc::numeric, "two-axis rotation: first column is degenerate");
    Vec3 c0 = a.normalized();
    Vec3 b_orth = b - c0 * c0.dot(b);
    if (b_orth.norm() < 1e-8)
        fail(Errc::numeric, "two-axis rotation: columns are parallel or second column degenerate");
    Vec3 c1 = b_orth.normalized();
    Vec3 c2 = c0.cross(c1);
    Mat3 r;
    r.m = {c0.x, c1.x, c2.x, c0.y, c1.y, c2.y, c0.z, c1.z, c2.z};
    return r;
}

TwoAxisRotation two_axis_from_quat(const Quat& q) { return two_axis_from_matrix(q.to_matrix()); }

Quat quat_from_two_axis(const TwoAxisRotation& t) { return Quat::from_matrix(matrix_from_two_axis(t)); }

Vec3 scaled_angle_axis_from_quat(const Quat& q_in) {
    Quat q = q_in.canonicalized();
    double s = std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z);
    double angle = 2.0 * std::atan2(s, q.w);
    double scale;
    if (s > 1e-8) {
        scale = angle / s;
    } else {
        // Series for 2*atan2(s, w)/s around s = 0 (w ~ 1 after canonicalize).
        scale = (2.0 / q.w) * (1.0 - s * s / (3.0 * q.w * q.w));
    }
    return {q.x * scale, q.y * scale, q.z * scale};
}

Quat quat_from_scaled_angle_axis(const Vec3& v) {
    double angle = v.norm();
    if (angle < 1e-8) {
        Quat q{1.0 - angle * angle / 8.0, v.x * 0.5, v.y * 0.5, v.z * 0.5};
        return q.normalized();
    }
    return Quat::from_axis_angle(v * (1.0 / angle), angle);
}

double RootTransform::yaw() const {
    Quat q = orientation.canonicalized();
    return 2.0 * std::atan2(q.y, q.w);
}

void RootTransform::check_valid() const {
    if (std::abs(orientation.x) > 1e-5 || std::abs(orientation.z) > 1e-5)
        fail(Errc::numeric, "root orientation axis is not vertical");
}

double yaw_of_angular_velocity(const Vec3& w, double dt) {
    double angle = w.norm() * dt;
    if (angle < 1e-12) return 0.0;
    double qw = std::cos(angle / 2);
    double qy = std::sin(angle / 2) * (w.y * dt) / angle;
    return 2.0 * std::atan2(qy, qw);
}

RootTransform integrate_root(const RootTransform& root, const Vec3& vp, const Vec3& vr, double dt) {
    if (dt <= 0) fail(Errc::config, "integrate_root: dt must be positive");
    RootTransform out = root;
    out.position = root.position + root.orientation.rotate(vp) * dt;
    double inc = yaw_of_angular_velocity(vr, dt);
    if (inc != 0.0) out.orientation = (root.orientation * Quat::from_yaw(inc)).normalized();
    return out;
}

std::vector<Vec3> finite_difference_positions(const std::vector<Vec3>& p, double dt) {
    if (p.size() < 2) fail(Errc::shape, "finite differences require at least 2 samples");
    std::vector<Vec3> v(p.size() - 1);
    for (std::size_t i = 0; i + 1 < p.size(); ++i) v[i] = (p[i + 1] - p[i]) * (1.0 / dt);
    return v;
}

std::vector<Vec3> finite_difference_rotations(const std::vector<Quat>& q, double dt) {
    if (q.size() < 2) fail(Errc::shape, "finite differences require at least 2 samples");
    std::vector<Vec3> v(q.size() - 1);
    for (std::size_t i = 0; i + 1 < q.size(); ++i) {
        Quat rel = (q[i + 1] * q[i].conjugated()).normalized();
        v[i] = scaled_angle_axis_from_quat(rel) * (1.0 / dt);
    }
    return v;
}

}  // namespace zeggs::geom
