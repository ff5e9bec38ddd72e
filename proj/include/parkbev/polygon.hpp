#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

namespace parkbev {

// Forward-mode dual scalar carrying N partial derivatives. Comparisons act on
// the value, so branchy geometry (clipping, hulls) differentiates through the
// branch taken at the current configuration.
template <int N>
struct Dual {
    double v = 0.0;
    std::array<double, N> d{};

    Dual() = default;
    Dual(double value) : v(value) {}
    static Dual seeded(double value, int slot) {
        Dual r(value);
        r.d[slot] = 1.0;
        return r;
    }

    Dual operator-() const {
        Dual r(-v);
        for (int i = 0; i < N; ++i) r.d[i] = -d[i];
        return r;
    }
    Dual operator+(const Dual& o) const {
        Dual r(v + o.v);
        for (int i = 0; i < N; ++i) r.d[i] = d[i] + o.d[i];
        return r;
    }
    Dual operator-(const Dual& o) const {
        Dual r(v - o.v);
        for (int i = 0; i < N; ++i) r.d[i] = d[i] - o.d[i];
        return r;
    }
    Dual operator*(const Dual& o) const {
        Dual r(v * o.v);
        for (int i = 0; i < N; ++i) r.d[i] = d[i] * o.v + v * o.d[i];
        return r;
    }
    Dual operator/(const Dual& o) const {
        Dual r(v / o.v);
        for (int i = 0; i < N; ++i) r.d[i] = (d[i] * o.v - v * o.d[i]) / (o.v * o.v);
        return r;
    }
    Dual& operator+=(const Dual& o) { return *this = *this + o; }
    Dual& operator-=(const Dual& o) { return *this = *this - o; }

    bool operator<(const Dual& o) const { return v < o.v; }
    bool operator>(const Dual& o) const { return v > o.v; }
    bool operator<=(const Dual& o) const { return v <= o.v; }
    bool operator>=(const Dual& o) const { return v >= o.v; }
    bool operator==(const Dual& o) const { return v == o.v; }
};

template <int N>
inline double valueOf(const Dual<N>& s) { return s.v; }
inline double valueOf(double s) { return s; }

template <class S>
struct Pt2 {
    S x{}, y{};
};

template <class S>
using Polygon2 = std::vector<Pt2<S>>;

// Signed shoelace area; positive for counterclockwise winding.
template <class S>
S signedArea(const Polygon2<S>& p) {
    S a{};
    size_t n = p.size();
    for (size_t i = 0; i < n; ++i) {
        const auto& u = p[i];
        const auto& w = p[(i + 1) % n];
        a += u.x * w.y - w.x * u.y;
    }
    return a * S(0.5);
}

template <class S>
S cross2(const Pt2<S>& o, const Pt2<S>& a, const Pt2<S>& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Sutherland-Hodgman clip of a convex subject polygon against a convex,
// counterclockwise clip polygon. May return an empty polygon.
template <class S>
Polygon2<S> clipConvex(const Polygon2<S>& subject, const Polygon2<S>& clip) {
    Polygon2<S> out = subject;
    size_t m = clip.size();
    for (size_t e = 0; e < m && !out.empty(); ++e) {
        const Pt2<S>& a = clip[e];
        const Pt2<S>& b = clip[(e + 1) % m];
        Polygon2<S> in;
        in.swap(out);
        size_t n = in.size();
        for (size_t i = 0; i < n; ++i) {
            const Pt2<S>& p = in[i];
            const Pt2<S>& q = in[(i + 1) % n];
            S sp = cross2(a, b, p);
            S sq = cross2(a, b, q);
            bool pin = valueOf(sp) >= 0.0, qin = valueOf(sq) >= 0.0;
            if (pin) out.push_back(p);
            if (pin != qin) {
                S t = sp / (sp - sq);
                out.push_back({p.x + (q.x - p.x) * t, p.y + (q.y - p.y) * t});
            }
        }
    }
    return out;
}

// Andrew monotone chain; returns a counterclockwise hull (collinear points dropped).
template <class S>
Polygon2<S> convexHull(Polygon2<S> pts) {
    std::sort(pts.begin(), pts.end(), [](const Pt2<S>& a, const Pt2<S>& b) {
        return valueOf(a.x) < valueOf(b.x) ||
               (valueOf(a.x) == valueOf(b.x) && valueOf(a.y) < valueOf(b.y));
    });
    size_t n = pts.size();
    if (n < 3) return pts;
    Polygon2<S> h(2 * n);
    size_t k = 0;
    for (size_t i = 0; i < n; ++i) {
        while (k >= 2 && valueOf(cross2(h[k - 2], h[k - 1], pts[i])) <= 0.0) --k;
        h[k++] = pts[i];
    }
    for (size_t i = n - 1, t = k + 1; i-- > 0;) {
        while (k >= t && valueOf(cross2(h[k - 2], h[k - 1], pts[i])) <= 0.0) --k;
        h[k++] = pts[i];
    }
    h.resize(k - 1);
    return h;
}

template <class S>
S intersectionArea(const Polygon2<S>& a, const Polygon2<S>& b) {
    Polygon2<S> inter = clipConvex(a, b);
    if (inter.size() < 3) return S(0.0);
    return signedArea(inter);
}

// Both polygons must be counterclockwise. Returns GIoU in (-1, 1]; defined as
// 0 when the enclosing hull is degenerate.
template <class S>
S giouConvex(const Polygon2<S>& a, const Polygon2<S>& b) {
    S area_a = signedArea(a);
    S area_b = signedArea(b);
    S inter = intersectionArea(a, b);
    S uni = area_a + area_b - inter;

    Polygon2<S> all = a;
    all.insert(all.end(), b.begin(), b.end());
    Polygon2<S> hull = convexHull(all);
    if (hull.size() < 3) return S(0.0);
    S hull_area = signedArea(hull);
    if (!(valueOf(hull_area) > 1e-12)) return S(0.0);
    S iou = (valueOf(uni) > 0.0) ? inter / uni : S(0.0);
    return iou - (hull_area - uni) / hull_area;
}

template <class S>
S iouConvex(const Polygon2<S>& a, const Polygon2<S>& b) {
    S inter = intersectionArea(a, b);
    S uni = signedArea(a) + signedArea(b) - inter;
    if (!(valueOf(uni) > 0.0)) return S(0.0);
    return inter / uni;
}

// Four-vertex convex polygon in BEV meters, counterclockwise canonical winding.
struct ConvexQuad {
    std::array<Pt2<double>, 4> v{};

    static constexpr double kDegenerateArea = 1e-9;  // m^2

    // Reorders to counterclockwise (reverses clockwise input).
    static ConvexQuad canonical(const std::array<Pt2<double>, 4>& pts);

    Polygon2<double> asPolygon() const { return {v[0], v[1], v[2], v[3]}; }
    double area() const;
    bool degenerate() const { return area() < kDegenerateArea; }

    // Reflective (y -> -y) then rigid transform about the vehicle origin.
    // Winding is re-canonicalized after a flip.
    ConvexQuad transformed(double yaw, bool flip, Pt2<double> translation) const;
};

double quadArea(const ConvexQuad& q);
double quadIntersectionArea(const ConvexQuad& a, const ConvexQuad& b);
// GIoU of two quads; both degenerate -> 0 (the degenerate_out flag is set).
double quadGiou(const ConvexQuad& a, const ConvexQuad& b, bool* degenerate_out = nullptr);
double quadIou(const ConvexQuad& a, const ConvexQuad& b);

// Point transform matching ConvexQuad::transformed.
Pt2<double> transformPoint(Pt2<double> p, double yaw, bool flip, Pt2<double> translation);

// 1 - GIoU(hull(pred points), gt) with analytic gradient w.r.t. the eight
// predicted coordinates (x0,y0,...,x3,y3). The predicted points may be in any
// order and need not form a convex quad; the hull is what the loss sees.
struct GiouLossResult {
    double value = 0.0;
    std::array<double, 8> grad{};
};
GiouLossResult giouLossWithGrad(const std::array<Pt2<double>, 4>& pred, const ConvexQuad& gt);

}  // namespace parkbev
