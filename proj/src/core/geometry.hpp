#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace preview {

struct vec3 {
    double x = 0, y = 0, z = 0;

    vec3 operator+(const vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    vec3 operator-(const vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    vec3& operator+=(const vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
};

inline double dot(const vec3& a, const vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline vec3 cross(const vec3& a, const vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const vec3& a) { return std::sqrt(dot(a, a)); }
inline vec3 normalized(const vec3& a) {
    double n = norm(a);
    return n > 0 ? a * (1.0 / n) : vec3{0, 0, 0};
}

// Row-major 3x3.
struct mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static mat3 identity() { return {}; }
    double operator()(int r, int c) const { return m[size_t(3 * r + c)]; }
    double& operator()(int r, int c) { return m[size_t(3 * r + c)]; }

    vec3 operator*(const vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    mat3 operator*(const mat3& o) const {
        mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0;
                for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
                r(i, j) = s;
            }
        return r;
    }
    mat3 transposed() const {
        mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
        return r;
    }
    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }
};

mat3 axis_angle_to_mat3(const vec3& axis_angle);
mat3 rot_x(double a);
mat3 rot_y(double a);
mat3 rot_z(double a);

// Rigid transform p -> R p + t.
struct rigid {
    mat3 R;
    vec3 t;

    vec3 operator*(const vec3& p) const { return R * p + t; }
    rigid operator*(const rigid& o) const { return {R * o.R, R * o.t + t}; }
    rigid inverse() const {
        mat3 Rt = R.transposed();
        return {Rt, Rt * (t * -1.0)};
    }
};

// Pinhole camera view. Extrinsics map world points into the camera frame
// (x right, y down, z along the optical axis). Pixel (row v, col u) has its
// center at image coordinate (u, v) exactly.
struct camera_view {
    std::string id = "v1";
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int height = 0, width = 0;
    rigid extrinsics;  // world -> camera

    vec3 to_camera(const vec3& world) const { return extrinsics * world; }
    vec3 to_world(const vec3& cam) const { return extrinsics.inverse() * cam; }

    // Projects a camera-frame point; returns (u, v).
    std::array<double, 2> project(const vec3& cam) const {
        return {fx * cam.x / cam.z + cx, fy * cam.y / cam.z + cy};
    }

    // Back-projects pixel coordinates at the given optical-axis depth.
    vec3 backproject(double u, double v, double depth) const {
        return {(u - cx) * depth / fx, (v - cy) * depth / fy, depth};
    }

    bool inside(double u, double v) const {
        return u >= 0.0 && u <= width - 1.0 && v >= 0.0 && v <= height - 1.0;
    }
};

struct camera_rig {
    std::vector<camera_view> views;  // exactly two for the synthetic rigs
};

// Orthonormality check used by manifest validation (R R^T = I, det = +1).
bool rotation_is_orthonormal(const mat3& R, double tol);

// Flattened row-major 4x4 for the manifest wire format.
std::array<double, 16> rigid_to_mat4(const rigid& T);
rigid mat4_to_rigid(const std::array<double, 16>& m);

}  // namespace preview
