#pragma once

#include <cmath>

namespace opose {

struct Vec2 {
    double x = 0.0, y = 0.0;

    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double dot(Vec2 o) const { return x * o.x + y * o.y; }
    double norm() const { return std::sqrt(x * x + y * y); }
};

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(Vec3 o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(Vec3 o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(Vec3 o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(Vec3 o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(x * x + y * y + z * z); }
    Vec3 normalized(double eps = 1e-12) const {
        double n = norm();
        return n > eps ? Vec3{x / n, y / n, z / n} : Vec3{};
    }
};

struct Mat3 {
    // Row-major 3x3.
    double m[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};

    Vec3 apply(Vec3 v) const {
        return {m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
                m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
                m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z};
    }
    Mat3 mul(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                r.m[i][j] = 0.0;
                for (int k = 0; k < 3; ++k) r.m[i][j] += m[i][k] * o.m[k][j];
            }
        return r;
    }
    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r.m[i][j] = m[j][i];
        return r;
    }
    double det() const {
        return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
               m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
               m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    }

    // Rodrigues rotation about a unit axis.
    static Mat3 rotation(Vec3 axis, double angle) {
        Vec3 u = axis.normalized();
        double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
        Mat3 r;
        r.m[0][0] = c + u.x * u.x * t;
        r.m[0][1] = u.x * u.y * t - u.z * s;
        r.m[0][2] = u.x * u.z * t + u.y * s;
        r.m[1][0] = u.y * u.x * t + u.z * s;
        r.m[1][1] = c + u.y * u.y * t;
        r.m[1][2] = u.y * u.z * t - u.x * s;
        r.m[2][0] = u.z * u.x * t - u.y * s;
        r.m[2][1] = u.z * u.y * t + u.x * s;
        r.m[2][2] = c + u.z * u.z * t;
        return r;
    }
};

// Membership tests for map pixels, whose centers sit at integer coordinates.
// Along the limb axis the band is closed ([0, L]); across it the band is
// open (|s| < d/2), which keeps widths exact for integer-aligned limbs.

// Oriented rectangle from p0 to p1 with full width d.
inline bool in_oriented_rect(Vec2 c, Vec2 p0, Vec2 p1, double d) {
    Vec2 axis = p1 - p0;
    double len = axis.norm();
    if (len <= 0.0) return false;
    Vec2 u{axis.x / len, axis.y / len};
    Vec2 rel = c - p0;
    double t = rel.dot(u);
    if (t < 0.0 || t > len) return false;
    double s = rel.x * u.y - rel.y * u.x;  // signed distance across the axis
    return std::abs(s) < d / 2.0;
}

// Axis-aligned square of side d centered at `center`, open on all sides.
inline bool in_centered_square(Vec2 c, Vec2 center, double d) {
    return std::abs(c.x - center.x) < d / 2.0 && std::abs(c.y - center.y) < d / 2.0;
}

inline bool in_circle(Vec2 c, Vec2 center, double r) {
    Vec2 rel = c - center;
    return rel.dot(rel) < r * r;
}

}  // namespace opose
