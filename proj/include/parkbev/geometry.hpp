#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace parkbev {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const;
};

// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return {}; }
    static Mat3 fromRows(const Vec3& r0, const Vec3& r1, const Vec3& r2);
    // Intrinsic rotation about a coordinate axis (0=x, 1=y, 2=z), right-handed.
    static Mat3 axisRotation(int axis, double angle);

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    Mat3 operator*(const Mat3& o) const;
    Mat3 transposed() const;
    double det() const;
};

// Quartic polynomial fisheye model: radial pixel distance as a function of the
// incidence angle, r(a) = c1*a + c2*a^2 + c3*a^3 + c4*a^4.
struct CameraIntrinsics {
    std::array<double, 4> c{};         // polynomial coefficients, pixels/rad^k
    double u0 = 0.0, v0 = 0.0;         // principal point, pixels
    int width = 0, height = 0;         // image size, pixels
    double alpha_max = 0.0;            // maximum incidence angle, radians

    // Validates c1 > 0, alpha_max in (0, pi], and strict monotonicity of the
    // polynomial on [0, alpha_max] (derivative sampled densely).
    static CameraIntrinsics make(const std::array<double, 4>& coeffs, double u0, double v0,
                                 int width, int height, double alpha_max);

    // r(alpha). Throws std::domain_error when alpha is outside [0, alpha_max].
    double radialDistance(double alpha) const;
    // Root of r(alpha) = r_d on [0, alpha_max]. Newton from r_d/c1 with a
    // bisection fallback; residual tolerance 1e-12, at most 60 iterations.
    // Throws std::domain_error when r_d is outside [0, r(alpha_max)] and
    // NumericError when the iteration fails to converge.
    double incidenceAngle(double r_d) const;
    // Radius of the valid fisheye circle, r(alpha_max).
    double maxRadius() const { return radialDistancePoly(alpha_max); }

  private:
    double radialDistancePoly(double alpha) const {
        return ((c[3] * alpha + c[2]) * alpha + c[1]) * alpha * alpha + c[0] * alpha;
    }
    double radialDerivative(double alpha) const {
        return ((4.0 * c[3] * alpha + 3.0 * c[2]) * alpha + 2.0 * c[1]) * alpha + c[0];
    }
};

// Vehicle frame -> camera frame: p_cam = rotation * p_vehicle + translation.
// Vehicle frame: x forward, y left, z up, origin at the rear-axle center on
// the ground. Camera frame: z along the optical axis, x right (u), y down (v).
struct CameraExtrinsics {
    Mat3 rotation;
    Vec3 translation;

    // Validates orthonormality within 1e-9 and det = +1.
    static CameraExtrinsics make(const Mat3& rotation, const Vec3& translation);

    Vec3 toCamera(const Vec3& p_vehicle) const { return rotation * p_vehicle + translation; }
    Vec3 directionToVehicle(const Vec3& d_camera) const { return rotation.transposed() * d_camera; }
    Vec3 directionToCamera(const Vec3& d_vehicle) const { return rotation * d_vehicle; }
    Vec3 cameraCenterInVehicle() const { return rotation.transposed() * (translation * -1.0); }
};

struct CameraCalibration {
    CameraIntrinsics intrinsics;
    CameraExtrinsics extrinsics;
    std::string name;  // one of front/left/rear/right
};

struct Pixel {
    double u = 0.0, v = 0.0;
};

// Pixel -> unit ray in vehicle frame. Throws std::domain_error when the pixel
// lies outside the valid fisheye circle or the image bounds.
Vec3 unprojectPixel(const Pixel& px, const CameraCalibration& calib);

// Vehicle-frame ray -> distorted pixel, or nullopt when the incidence angle
// exceeds alpha_max. Throws std::domain_error on a zero ray.
std::optional<Pixel> projectRay(const Vec3& ray_vehicle, const CameraCalibration& calib);

// Unit ray directions in the vehicle frame, one per feature-map cell.
struct ProjectionEncoding {
    int rows = 0, cols = 0;
    int camera_index = 0;
    std::vector<Vec3> rays;           // row-major, rows*cols
    std::vector<std::uint8_t> valid;  // 0 when the cell center lies outside the fisheye circle

    const Vec3& ray(int r, int c) const { return rays[static_cast<size_t>(r) * cols + c]; }
    bool isValid(int r, int c) const { return valid[static_cast<size_t>(r) * cols + c] != 0; }
};

// Rays are sampled at cell centers of the cropped-then-resized input image
// (crop_top native pixels removed, remainder scaled to input_width x
// input_height), mapped back to native pixel coordinates.
ProjectionEncoding buildProjectionEncoding(const CameraCalibration& calib, int camera_index,
                                           int rows, int cols, int crop_top, int input_width,
                                           int input_height);

}  // namespace parkbev
