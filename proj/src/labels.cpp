#include "parkbev/labels.hpp"

namespace parkbev {

PolygonLabel canonicalizeLabel(PolygonLabel label) {
    Polygon2<double> poly{label.corners[0], label.corners[1], label.corners[2], label.corners[3]};
    if (signedArea(poly) < 0.0) {
        // Swap within the entry pair and within the rear pair; entry stays first.
        label = PolygonLabel{label.cls,
                             {label.corners[1], label.corners[0], label.corners[3], label.corners[2]},
                             {label.visibility[1], label.visibility[0], label.visibility[3],
                              label.visibility[2]}};
    }
    return label;
}

PolygonLabel transformLabel(const PolygonLabel& label, double yaw, bool flip,
                            Pt2<double> translation) {
    PolygonLabel out = label;
    for (int i = 0; i < 4; ++i)
        out.corners[i] = transformPoint(label.corners[i], yaw, flip, translation);
    return canonicalizeLabel(out);
}

}  // namespace parkbev
