#include "parkbev/polygon.hpp"

namespace parkbev {

ConvexQuad ConvexQuad::canonical(const std::array<Pt2<double>, 4>& pts) {
    ConvexQuad q;
    q.v = pts;
    Polygon2<double> p = {pts[0], pts[1], pts[2], pts[3]};
    if (signedArea(p) < 0.0) q.v = {pts[3], pts[2], pts[1], pts[0]};
    return q;
}

double ConvexQuad::area() const { return signedArea(asPolygon()); }

Pt2<double> transformPoint(Pt2<double> p, double yaw, bool flip, Pt2<double> translation) {
    if (flip) p.y = -p.y;
    double c = std::cos(yaw), s = std::sin(yaw);
    return {c * p.x - s * p.y + translation.x, s * p.x + c * p.y + translation.y};
}

ConvexQuad ConvexQuad::transformed(double yaw, bool flip, Pt2<double> translation) const {
    std::array<Pt2<double>, 4> out;
    for (int i = 0; i < 4; ++i) out[i] = transformPoint(v[i], yaw, flip, translation);
    return canonical(out);
}

double quadArea(const ConvexQuad& q) { return q.area(); }

double quadIntersectionArea(const ConvexQuad& a, const ConvexQuad& b) {
    return intersectionArea(a.asPolygon(), b.asPolygon());
}

double quadGiou(const ConvexQuad& a, const ConvexQuad& b, bool* degenerate_out) {
    bool degenerate = a.degenerate() && b.degenerate();
    if (degenerate_out) *degenerate_out = degenerate;
    if (degenerate) return 0.0;
    return giouConvex(a.asPolygon(), b.asPolygon());
}

double quadIou(const ConvexQuad& a, const ConvexQuad& b) {
    return iouConvex(a.asPolygon(), b.asPolygon());
}

GiouLossResult giouLossWithGrad(const std::array<Pt2<double>, 4>& pred, const ConvexQuad& gt) {
    using D = Dual<8>;
    Polygon2<D> pts(4);
    for (int i = 0; i < 4; ++i) {
        pts[i].x = D::seeded(pred[i].x, 2 * i);
        pts[i].y = D::seeded(pred[i].y, 2 * i + 1);
    }
    Polygon2<D> pred_hull = convexHull(pts);

    Polygon2<D> gt_poly(4);
    for (int i = 0; i < 4; ++i) gt_poly[i] = {D(gt.v[i].x), D(gt.v[i].y)};

    GiouLossResult res;
    if (pred_hull.size() < 3) {
        // Collapsed prediction: fall back to pulling every point toward the
        // target centroid so the loss still carries a useful gradient.
        double cx = 0.0, cy = 0.0;
        for (int i = 0; i < 4; ++i) {
            cx += gt.v[i].x * 0.25;
            cy += gt.v[i].y * 0.25;
        }
        D loss(1.0);
        for (const auto& p : pts) {
            D dx = p.x - D(cx), dy = p.y - D(cy);
            loss += (dx * dx + dy * dy) * D(0.25);
        }
        res.value = loss.v;
        res.grad = loss.d;
        return res;
    }

    D giou = giouConvex(pred_hull, gt_poly);
    D loss = D(1.0) - giou;
    res.value = loss.v;
    res.grad = loss.d;
    return res;
}

}  // namespace parkbev
