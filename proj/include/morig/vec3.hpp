#pragma once

#include <cmath>

namespace morig {

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3() = default;
    Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
    Vec3 operator-() const { return {-x, -y, -z}; }
    bool operator==(const Vec3& o) const { return x == o.x && y == o.y && z == o.z; }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm2(const Vec3& v) { return dot(v, v); }
inline double norm(const Vec3& v) { return std::sqrt(norm2(v)); }
inline Vec3 normalized(const Vec3& v) {
    double n = norm(v);
    return n > 0 ? v / n : Vec3{0, 0, 0};
}
inline double dist(const Vec3& a, const Vec3& b) { return norm(a - b); }

// Distance from point to segment [a,b].
inline double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
    Vec3 ab = b - a;
    double len2 = norm2(ab);
    if (len2 == 0) return dist(p, a);
    double t = dot(p - a, ab) / len2;
    t = t < 0 ? 0 : (t > 1 ? 1 : t);
    return dist(p, a + ab * t);
}

// Unit quaternion (w,x,y,z).
struct Quat {
    double w = 1, x = 0, y = 0, z = 0;

    static Quat identity() { return {}; }

    static Quat from_axis_angle(const Vec3& axis, double angle) {
        Vec3 a = normalized(axis);
        double h = angle * 0.5;
        double s = std::sin(h);
        return {std::cos(h), a.x * s, a.y * s, a.z * s};
    }

    // axis * angle as a single 3-vector (zero rotation -> zero vector)
    static Quat from_rotvec(const Vec3& rv) {
        double angle = norm(rv);
        if (angle < 1e-14) return identity();
        return from_axis_angle(rv / angle, angle);
    }

    Vec3 to_rotvec() const {
        Quat q = normalized_q();
        double w_ = q.w < 0 ? -q.w : q.w;
        Vec3 v = q.w < 0 ? Vec3{-q.x, -q.y, -q.z} : Vec3{q.x, q.y, q.z};
        double s = norm(v);
        if (s < 1e-14) return {0, 0, 0};
        double angle = 2.0 * std::atan2(s, w_);
        return v * (angle / s);
    }

    Quat normalized_q() const {
        double n = std::sqrt(w * w + x * x + y * y + z * z);
        if (n == 0) return identity();
        return {w / n, x / n, y / n, z / n};
    }

    Quat operator*(const Quat& o) const {
        return {w * o.w - x * o.x - y * o.y - z * o.z, w * o.x + x * o.w + y * o.z - z * o.y,
                w * o.y - x * o.z + y * o.w + z * o.x, w * o.z + x * o.y - y * o.x + z * o.w};
    }

    Vec3 rotate(const Vec3& v) const {
        Vec3 u{x, y, z};
        Vec3 t = 2.0 * cross(u, v);
        return v + w * t + cross(u, t);
    }
};

inline Quat slerp(const Quat& a, const Quat& bin, double t) {
    Quat b = bin;
    double d = a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
    if (d < 0) {
        b = {-b.w, -b.x, -b.y, -b.z};
        d = -d;
    }
    if (d > 0.9995) { // nearly parallel: lerp + renormalize
        Quat r{a.w + t * (b.w - a.w), a.x + t * (b.x - a.x), a.y + t * (b.y - a.y),
               a.z + t * (b.z - a.z)};
        return r.normalized_q();
    }
    double theta = std::acos(d);
    double sa = std::sin((1 - t) * theta) / std::sin(theta);
    double sb = std::sin(t * theta) / std::sin(theta);
    return {sa * a.w + sb * b.w, sa * a.x + sb * b.x, sa * a.y + sb * b.y, sa * a.z + sb * b.z};
}

// 3x3 + translation affine transform.
struct Affine {
    double m[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1}; // row major
    Vec3 t;

    static Affine identity() { return {}; }

    static Affine from_quat(const Quat& qin) {
        Quat q = qin.normalized_q();
        Affine a;
        double xx = q.x * q.x, yy = q.y * q.y, zz = q.z * q.z;
        double xy = q.x * q.y, xz = q.x * q.z, yz = q.y * q.z;
        double wx = q.w * q.x, wy = q.w * q.y, wz = q.w * q.z;
        a.m[0] = 1 - 2 * (yy + zz);
        a.m[1] = 2 * (xy - wz);
        a.m[2] = 2 * (xz + wy);
        a.m[3] = 2 * (xy + wz);
        a.m[4] = 1 - 2 * (xx + zz);
        a.m[5] = 2 * (yz - wx);
        a.m[6] = 2 * (xz - wy);
        a.m[7] = 2 * (yz + wx);
        a.m[8] = 1 - 2 * (xx + yy);
        return a;
    }

    Vec3 apply(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z + t.x,
                m[3] * v.x + m[4] * v.y + m[5] * v.z + t.y,
                m[6] * v.x + m[7] * v.y + m[8] * v.z + t.z};
    }

    Vec3 apply_linear(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }

    // this ∘ other (apply `other` first)
    Affine compose(const Affine& o) const {
        Affine r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                r.m[i * 3 + j] = 0;
                for (int k = 0; k < 3; ++k) r.m[i * 3 + j] += m[i * 3 + k] * o.m[k * 3 + j];
            }
        r.t = apply(o.t);
        return r;
    }
};

// Rotation about a fixed pivot point.
inline Affine rotation_about(const Quat& q, const Vec3& pivot) {
    Affine a = Affine::from_quat(q);
    a.t = pivot - a.apply_linear(pivot);
    return a;
}

} // namespace morig
