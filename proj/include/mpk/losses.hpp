#pragma once

#include <map>
#include <string>
#include <vector>

#include "mpk/camera.hpp"
#include "mpk/decode.hpp"
#include "mpk/mesh.hpp"
#include "mpk/tensor.hpp"

namespace mpk {

// One ground-truth surface sample: an image position and the surface point it
// was annotated with, stored in barycentric form.
struct SurfaceAnnotation {
    Vec2 pixel;
    BarycentricCoord bc;
};

// Loss value plus analytic gradients keyed by input name.
struct LossValue {
    double value = 0.0;
    std::map<std::string, Tensor> gradients;
};

// Cross entropy between the pixel posterior and the annotation's barycentric
// distribution; gradient key "scores" (= q - p).
LossValue barycentric_cross_entropy(const VecX& scores_at_pixel, const SurfaceAnnotation& ann,
                                    const MeshTopology& topo);

// || pixel - sum_v beta_v argsoftmax(channel_v) ||, smoothed at zero;
// gradient key "heatmaps" over the full H x W x V stack (three channels live).
LossValue uv_consistency_loss(const HeatmapStack& heatmaps, const SurfaceAnnotation& ann,
                              const MeshTopology& topo);

enum class VisLabel { Visible, Invisible, Unlabeled };

// Mean binary cross entropy over labeled vertices; gradient key "visibility".
LossValue visibility_bce(const VecX& visibility, const std::vector<VisLabel>& labels);

enum class EdgeLossKind { L1, L2 };
enum class NormalLossKind { PerFace, PerVertexArea };

struct GeometricLossConfig {
    EdgeLossKind edge = EdgeLossKind::L1;
    NormalLossKind normal = NormalLossKind::PerFace;
};

struct GeometricLosses {
    LossValue vertex;  // mean squared vertex distance
    LossValue edge;    // mean |edge length distortion| (or squared)
    LossValue normal;  // mean (1 - cos) of face (or vertex) normals
};

// Gradient key "pred" (V x 3) on all three losses.
GeometricLosses geometric_losses(const Points3& pred, const Points3& gt,
                                 const MeshTopology& topo,
                                 const GeometricLossConfig& config = {});

enum class JointLossMode { ThreeD, Projected2D };

// Mean squared joint error, in 3D or after weak-perspective projection.
// gt_joints is J x 3 in 3D mode and J x 2 (pixels) in projected mode.
// Gradient key "pred" (V x 3); only vertices with landmarker support receive
// gradient.
LossValue joint_localization_loss(const Points3& pred_vertices, const MatX& gt_joints,
                                  const Landmarker& lm, JointLossMode mode,
                                  const Camera& camera = {});

// Weights of the training objective; defaults follow the published recipe.
struct LossWeights {
    double bl = 1.0;
    double cons = 1.0;
    double vis = 10.0;
    double vertex = 0.1;
    double edge = 1.0;
    double normal = 0.1;
    double joint = 1.0;
    double sil_l2 = 100.0;
    double sil_boundary = 1.0;

    double weight_for(const std::string& name) const;
};

// Canonical component names expected by total_loss.
const std::vector<std::string>& total_loss_components();

// Weighted sum of the named components; gradients with a shared input name
// are summed with the same weights. Every canonical component must be
// present (pass explicit zero LossValues to opt a term out).
LossValue total_loss(const std::map<std::string, LossValue>& components,
                     const LossWeights& weights = {});

}  // namespace mpk
