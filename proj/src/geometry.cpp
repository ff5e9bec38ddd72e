#include "parkbev/geometry.hpp"

#include <algorithm>
#include <stdexcept>

#include "parkbev/errors.hpp"

namespace parkbev {

Vec3 Vec3::normalized() const {
    double n = norm();
    if (n <= 0.0) throw std::domain_error("cannot normalize zero vector");
    return {x / n, y / n, z / n};
}

Mat3 Mat3::fromRows(const Vec3& r0, const Vec3& r1, const Vec3& r2) {
    Mat3 r;
    r.m = {r0.x, r0.y, r0.z, r1.x, r1.y, r1.z, r2.x, r2.y, r2.z};
    return r;
}

Mat3 Mat3::axisRotation(int axis, double a) {
    double c = std::cos(a), s = std::sin(a);
    Mat3 r;
    switch (axis) {
        case 0: r.m = {1, 0, 0, 0, c, -s, 0, s, c}; break;
        case 1: r.m = {c, 0, s, 0, 1, 0, -s, 0, c}; break;
        case 2: r.m = {c, -s, 0, s, c, 0, 0, 0, 1}; break;
        default: throw std::domain_error("axis must be 0, 1 or 2");
    }
    return r;
}

Mat3 Mat3::operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += m[i * 3 + k] * o.m[k * 3 + j];
            r.m[i * 3 + j] = s;
        }
    return r;
}

Mat3 Mat3::transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) r.m[j * 3 + i] = m[i * 3 + j];
    return r;
}

double Mat3::det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

CameraIntrinsics CameraIntrinsics::make(const std::array<double, 4>& coeffs, double u0, double v0,
                                        int width, int height, double alpha_max) {
    CameraIntrinsics k;
    k.c = coeffs;
    k.u0 = u0;
    k.v0 = v0;
    k.width = width;
    k.height = height;
    k.alpha_max = alpha_max;
    if (coeffs[0] <= 0.0) throw ConfigError("fisheye intrinsics: c1 must be positive");
    if (!(alpha_max > 0.0 && alpha_max <= M_PI))
        throw ConfigError("fisheye intrinsics: alpha_max must lie in (0, pi]");
    if (width <= 0 || height <= 0) throw ConfigError("fisheye intrinsics: bad image size");
    constexpr int kSamples = 2048;
    for (int i = 0; i <= kSamples; ++i) {
        double a = alpha_max * i / kSamples;
        if (k.radialDerivative(a) <= 0.0)
            throw ConfigError("fisheye intrinsics: r(alpha) is not strictly increasing on [0, alpha_max]");
    }
    return k;
}

double CameraIntrinsics::radialDistance(double alpha) const {
    if (alpha < 0.0 || alpha > alpha_max)
        throw std::domain_error("incidence angle outside [0, alpha_max]");
    return radialDistancePoly(alpha);
}

double CameraIntrinsics::incidenceAngle(double r_d) const {
    double r_max = radialDistancePoly(alpha_max);
    if (r_d < 0.0 || r_d > r_max + 1e-9)
        throw std::domain_error("radial distance outside [0, r(alpha_max)]");
    r_d = std::min(r_d, r_max);
    if (r_d == 0.0) return 0.0;

    double lo = 0.0, hi = alpha_max;
    double a = std::clamp(r_d / c[0], lo, hi);
    constexpr double kTol = 1e-12;
    constexpr int kMaxIter = 60;
    for (int it = 0; it < kMaxIter; ++it) {
        double f = radialDistancePoly(a) - r_d;
        if (std::abs(f) <= kTol) return a;
        if (f > 0.0)
            hi = a;
        else
            lo = a;
        double df = radialDerivative(a);
        double next = a - f / df;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);  // bisection fallback
        a = next;
    }
    if (std::abs(radialDistancePoly(a) - r_d) <= 1e-9) return a;
    throw NumericError("fisheye inverse did not converge");
}

CameraExtrinsics CameraExtrinsics::make(const Mat3& rotation, const Vec3& translation) {
    Mat3 should_be_identity = rotation * rotation.transposed();
    for (int i = 0; i < 9; ++i) {
        double expected = (i % 4 == 0) ? 1.0 : 0.0;
        if (std::abs(should_be_identity.m[i] - expected) > 1e-9)
            throw ConfigError("extrinsics rotation is not orthonormal");
    }
    if (std::abs(rotation.det() - 1.0) > 1e-9)
        throw ConfigError("extrinsics rotation must have det +1");
    return {rotation, translation};
}

Vec3 unprojectPixel(const Pixel& px, const CameraCalibration& calib) {
    const CameraIntrinsics& k = calib.intrinsics;
    if (px.u < 0.0 || px.u > k.width || px.v < 0.0 || px.v > k.height)
        throw std::domain_error("pixel outside image bounds");
    double du = px.u - k.u0, dv = px.v - k.v0;
    double r = std::hypot(du, dv);
    if (r > k.maxRadius()) throw std::domain_error("pixel outside the valid fisheye circle");
    double alpha = k.incidenceAngle(r);
    double phi = (r > 0.0) ? std::atan2(dv, du) : 0.0;
    double sa = std::sin(alpha);
    Vec3 d_cam{sa * std::cos(phi), sa * std::sin(phi), std::cos(alpha)};
    return calib.extrinsics.directionToVehicle(d_cam);
}

std::optional<Pixel> projectRay(const Vec3& ray_vehicle, const CameraCalibration& calib) {
    double n = ray_vehicle.norm();
    if (n <= 0.0) throw std::domain_error("cannot project a zero ray");
    Vec3 d = calib.extrinsics.directionToCamera(ray_vehicle * (1.0 / n));
    double rho = std::hypot(d.x, d.y);
    double alpha = std::atan2(rho, d.z);
    if (alpha > calib.intrinsics.alpha_max) return std::nullopt;
    double r = calib.intrinsics.radialDistance(alpha);
    double phi = (rho > 0.0) ? std::atan2(d.y, d.x) : 0.0;
    return Pixel{calib.intrinsics.u0 + r * std::cos(phi), calib.intrinsics.v0 + r * std::sin(phi)};
}

ProjectionEncoding buildProjectionEncoding(const CameraCalibration& calib, int camera_index,
                                           int rows, int cols, int crop_top, int input_width,
                                           int input_height) {
    if (rows <= 0 || cols <= 0) throw ConfigError("projection encoding: bad endpoint shape");
    const CameraIntrinsics& k = calib.intrinsics;
    if (crop_top < 0 || crop_top >= k.height) throw ConfigError("projection encoding: bad crop_top");

    ProjectionEncoding enc;
    enc.rows = rows;
    enc.cols = cols;
    enc.camera_index = camera_index;
    enc.rays.resize(static_cast<size_t>(rows) * cols);
    enc.valid.resize(static_cast<size_t>(rows) * cols, 0);

    double sx = static_cast<double>(k.width) / input_width;
    double sy = static_cast<double>(k.height - crop_top) / input_height;
    double r_max = k.maxRadius();
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            // Cell center in the cropped+resized image, mapped back to native pixels.
            double u_in = (c + 0.5) * input_width / cols;
            double v_in = (r + 0.5) * input_height / rows;
            Pixel native{u_in * sx, v_in * sy + crop_top};
            size_t idx = static_cast<size_t>(r) * cols + c;
            double rad = std::hypot(native.u - k.u0, native.v - k.v0);
            if (rad > r_max) {
                enc.rays[idx] = {0, 0, 1};
                continue;
            }
            enc.rays[idx] = unprojectPixel(native, calib).normalized();
            enc.valid[idx] = 1;
        }
    }
    return enc;
}

}  // namespace parkbev
