#pragma once

#include <array>

#include "mpk/types.hpp"

namespace mpk {

// Signed parallelogram area of (b-a) x (c-a); positive for counterclockwise
// order in a y-up frame.
inline double signed_area2(const Vec2& a, const Vec2& b, const Vec2& c) {
    return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

bool point_in_triangle(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c);

struct SegmentHit {
    Vec2 point;   // closest point on the segment
    double t;     // clamped parameter in [0,1]
    double dist2;
};

SegmentHit closest_point_on_segment(const Vec2& p, const Vec2& u, const Vec2& v);

// Squared distance from p to the triangle boundary and the nearest edge.
struct BoundaryHit {
    double dist2;
    int edge;   // 0:(a,b) 1:(b,c) 2:(c,a)
    double t;   // clamped parameter along that edge
};

BoundaryHit closest_boundary_point(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c);

// Barycentric coordinates of p with respect to (a,b,c); p need not be inside.
// Degenerate triangles yield weights (1,0,0).
std::array<double, 3> barycentric_in_triangle(const Vec2& p, const Vec2& a, const Vec2& b,
                                              const Vec2& c);

// Barycentric coordinates of the point of the (closed) triangle closest to p:
// the plain barycentrics when p is inside, otherwise the clamped boundary point.
// `region` reports where the closest point landed: 0 interior, 1 edge, 2 vertex.
struct ClampedBarycentric {
    std::array<double, 3> weights;
    int region;
    int feature;  // edge index or vertex index when on the boundary
    double t;     // edge parameter when region == 1
};

ClampedBarycentric clamped_barycentric(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c);

}  // namespace mpk
