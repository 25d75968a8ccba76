#pragma once

#include "mpk/losses.hpp"
#include "mpk/mesh.hpp"
#include "mpk/types.hpp"

namespace mpk {

// Render raster; pixel (i, j) = (col, row) sits at (x0 + i, y0 + j) in crop
// coordinates, so a padded grid can extend past the input crop.
struct RenderGrid {
    int height = 0;
    int width = 0;
    double x0 = 0.0;
    double y0 = 0.0;

    Vec2 pixel_center(int x, int y) const { return Vec2(x0 + x, y0 + y); }
};

RenderGrid crop_grid(int height, int width);
// Pad by `fraction` of the crop size on every side (rounded up to pixels).
RenderGrid padded_grid(int height, int width, double fraction);

// Occupancy-style soft influence of one 2D triangle at a pixel:
// sigmoid(delta * d^2 / sigma), delta = +1 inside / -1 outside, d = distance
// to the triangle boundary. Zero-area triangles contribute nothing.
double face_influence(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& pixel,
                      double sigma);

struct SoftSilhouette {
    Image image;  // grid.height x grid.width, values in [0, 1]
    double sigma = 1.0;
    RenderGrid grid;
};

// Visibility-weighted occupancy aggregation:
//   I(p) = 1 - prod_j (1 - w_j(p) * D_j(p))
// where w_j interpolates the face's vertex visibilities at the pixel's
// (clamped) barycentric coordinates.
SoftSilhouette render_soft_silhouette(const Points2& vertices_2d, const VecX& visibility,
                                      const MeshTopology& topo, const RenderGrid& grid,
                                      double sigma);

struct RenderGrads {
    Points2 vertices_2d;
    VecX visibility;
};

// Backprop of an image-space gradient through the soft render.
RenderGrads render_soft_silhouette_backward(const Points2& vertices_2d, const VecX& visibility,
                                            const MeshTopology& topo, const RenderGrid& grid,
                                            double sigma, const Image& dL_dimage);

// Binary coverage of the mesh: pixel centers inside any (non-degenerate) face.
Image rasterize_hard(const Points2& vertices_2d, const MeshTopology& topo,
                     const RenderGrid& grid);

// Level-set of the mask boundary: 0 outside the mask; inside pixels carry
// (Euclidean distance to the nearest boundary pixel) + 1, where boundary
// pixels are inside pixels 4-adjacent to the outside or the image border.
struct DistanceField {
    Image values;
};

DistanceField distance_field(const Image& mask);

struct SilhouetteLoss {
    LossValue mse;       // mean squared pixel difference to the GT mask
    LossValue boundary;  // -sum D * I; penalizes silhouettes short of the mask
    double combined = 0.0;
};

// Gradients are keyed "silhouette" (one tensor per term, dL/dI pixels).
SilhouetteLoss silhouette_loss(const SoftSilhouette& silhouette, const Image& gt_mask,
                               const DistanceField& df, double mse_weight = 100.0,
                               double boundary_weight = 1.0);

// Zero-extend a mask to a padded render grid.
Image pad_mask(const Image& mask, const RenderGrid& grid);

}  // namespace mpk
