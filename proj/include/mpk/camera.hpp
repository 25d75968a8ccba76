#pragma once

#include "mpk/types.hpp"

namespace mpk {

// Weak perspective camera: pixels = scale * model XY + principal point.
// root_depth is supplied externally (stand-in for a separate root predictor).
struct Camera {
    double scale = 1.0;     // pixels per model unit, > 0
    Vec2 principal{0.0, 0.0};
    double root_depth = 0.0;  // pixels

    Vec2 project(const Vec3& p) const {
        return Vec2(scale * p.x() + principal.x(), scale * p.y() + principal.y());
    }
};

}  // namespace mpk
