#include "core/geometry.hpp"

namespace preview {

mat3 axis_angle_to_mat3(const vec3& axis_angle) {
    double angle = norm(axis_angle);
    if (angle < 1e-15) return mat3::identity();
    vec3 u = axis_angle * (1.0 / angle);
    double c = std::cos(angle), s = std::sin(angle), ic = 1.0 - c;
    mat3 R;
    R(0, 0) = c + u.x * u.x * ic;
    R(0, 1) = u.x * u.y * ic - u.z * s;
    R(0, 2) = u.x * u.z * ic + u.y * s;
    R(1, 0) = u.y * u.x * ic + u.z * s;
    R(1, 1) = c + u.y * u.y * ic;
    R(1, 2) = u.y * u.z * ic - u.x * s;
    R(2, 0) = u.z * u.x * ic - u.y * s;
    R(2, 1) = u.z * u.y * ic + u.x * s;
    R(2, 2) = c + u.z * u.z * ic;
    return R;
}

mat3 rot_x(double a) {
    mat3 R;
    double c = std::cos(a), s = std::sin(a);
    R(1, 1) = c;
    R(1, 2) = -s;
    R(2, 1) = s;
    R(2, 2) = c;
    return R;
}

mat3 rot_y(double a) {
    mat3 R;
    double c = std::cos(a), s = std::sin(a);
    R(0, 0) = c;
    R(0, 2) = s;
    R(2, 0) = -s;
    R(2, 2) = c;
    return R;
}

mat3 rot_z(double a) {
    mat3 R;
    double c = std::cos(a), s = std::sin(a);
    R(0, 0) = c;
    R(0, 1) = -s;
    R(1, 0) = s;
    R(1, 1) = c;
    return R;
}

bool rotation_is_orthonormal(const mat3& R, double tol) {
    mat3 RRt = R * R.transposed();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double expect = i == j ? 1.0 : 0.0;
            if (std::abs(RRt(i, j) - expect) > tol) return false;
        }
    return R.det() > 0.0;
}

std::array<double, 16> rigid_to_mat4(const rigid& T) {
    std::array<double, 16> m{};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) m[size_t(4 * i + j)] = T.R(i, j);
    }
    m[3] = T.t.x;
    m[7] = T.t.y;
    m[11] = T.t.z;
    m[15] = 1.0;
    return m;
}

rigid mat4_to_rigid(const std::array<double, 16>& m) {
    rigid T;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) T.R(i, j) = m[size_t(4 * i + j)];
    T.t = {m[3], m[7], m[11]};
    return T;
}

}  // namespace preview
