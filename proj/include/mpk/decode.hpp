#pragma once

#include <array>

#include "mpk/mesh.hpp"
#include "mpk/tensor.hpp"
#include "mpk/types.hpp"

namespace mpk {

// Per-vertex score maps over the crop, stored as an H x W x V tensor; entry
// (y, x, v) scores vertex v at pixel (x, y). Pixel centers sit on integer
// coordinates with the origin at the top-left pixel.
struct HeatmapStack {
    Tensor scores;  // dims {H, W, V}
    double alpha = 1.0;

    int height() const { return static_cast<int>(scores.dims[0]); }
    int width() const { return static_cast<int>(scores.dims[1]); }
    int vertex_count() const { return static_cast<int>(scores.dims[2]); }

    double& at(int x, int y, int v) { return scores.at(y, x, v); }
    double at(int x, int y, int v) const { return scores.at(y, x, v); }

    MatX channel(int v) const;             // H x W heatmap of one vertex
    VecX scores_at_pixel(int x, int y) const;  // V scores at one position
};

HeatmapStack make_heatmap_stack(int height, int width, int vertex_count, double alpha);

// Softmax with max-subtraction; throws NonFiniteInput on non-finite scores.
VecX stable_softmax(const VecX& scores);

// Expected pixel position under softmax(alpha * heatmap); returns (x, y).
Vec2 argsoftmax2d(const MatX& heatmap, double alpha);

// Chain rule through argsoftmax2d: given dL/d(x,y), the gradient on the map.
MatX argsoftmax2d_backward(const MatX& heatmap, double alpha, const Vec2& dL_dxy);

// Per-pixel posterior over vertices, q_v.
VecX pixel_posterior(const VecX& scores_at_pixel);

enum class UvStrategy { Barycentric, Nearest, GlobalAverage };

// Aggregate a vertex posterior into a surface coordinate. Barycentric picks
// the face with the largest cumulative posterior (ties to the lowest index)
// and renormalizes over its corners; Nearest returns the strongest vertex's
// UV; GlobalAverage averages the whole atlas under q.
Vec2 decode_uv(const VecX& posterior, const MeshTopology& topo, UvStrategy strategy);

// Regression branch output: per-axis bin logits plus visibility logits.
struct RegressionHead {
    Tensor logits_x, logits_y, logits_z;  // dims {V, B}
    VecX visibility_logits;               // V
    int bin_count = 64;
    int height = 0, width = 0;            // crop dims the ranges refer to
};

RegressionHead make_regression_head(int vertex_count, int bin_count, int height, int width);

enum class Axis { X, Y, Z };

// Linear range map from the bin coordinate span [0, B] to pixels:
// X: [-W, 2W], Y: [-H, 3H], Z: [-2W, 2W].
double bin_to_pixel(Axis axis, double bin, int bin_count, int height, int width);

// Expected bin coordinate under softmax(logits); bin centers sit at b + 0.5,
// so the result spans (0, B).
double argsoftmax1d(const VecX& logits);

VecX argsoftmax1d_backward(const VecX& logits, double dL_dbin);

struct RegressionDecode {
    Points3 positions;  // V x 3 in pixels
    VecX visibility;    // V in (0, 1)
};

RegressionDecode decode_regression(const RegressionHead& head);

// Gradients of scalar loss wrt the head's logits given gradients on the
// decoded positions and visibilities.
struct RegressionGrads {
    Tensor logits_x, logits_y, logits_z;
    VecX visibility_logits;
};

RegressionGrads decode_regression_backward(const RegressionHead& head,
                                           const Points3& dL_dpositions,
                                           const VecX& dL_dvisibility);

// Final per-vertex state: heatmap 2D, regressed 3D, visibility gate, fusion.
struct VertexState {
    Points2 sp_xy;      // heatmap-decoded 2D
    Points3 reg_xyz;    // regressed 3D
    VecX visibility;    // in [0, 1]
    Points3 fused_xyz;  // XY = w*sp + (1-w)*reg, Z = reg Z
};

VertexState fuse_predictions(const Points2& sp_xy, const Points3& reg_xyz,
                             const VecX& visibility);

struct FusionGrads {
    Points2 sp_xy;
    Points3 reg_xyz;
    VecX visibility;
};

FusionGrads fuse_predictions_backward(const Points2& sp_xy, const Points3& reg_xyz,
                                      const VecX& visibility, const Points3& dL_dfused);

}  // namespace mpk
