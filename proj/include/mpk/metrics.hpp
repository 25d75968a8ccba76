#pragma once

#include <functional>
#include <vector>

#include "mpk/losses.hpp"
#include "mpk/mesh.hpp"
#include "mpk/types.hpp"

namespace mpk {

// Similarity transform minimizing || s R p + t - g ||^2.
struct AlignmentTransform {
    double scale = 1.0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
    Points3 apply(const Points3& pts) const;
};

AlignmentTransform procrustes_align(const Points3& pred, const Points3& gt);

double alignment_residual(const AlignmentTransform& tf, const Points3& pred, const Points3& gt);

struct PoseMetrics {
    double mpjpe = 0.0;
    double pa_mpjpe = 0.0;
    double pve = 0.0;
};

// Errors in millimeters; unit_to_mm converts the input units.
PoseMetrics pose_metrics(const Points3& pred_joints, const Points3& gt_joints,
                         const Points3& pred_vertices, const Points3& gt_vertices,
                         int root_index, double unit_to_mm = 1.0);

struct ApAr {
    double ap = 0.0;
    double ar = 0.0;
};

// OKS-thresholded AP/AR over thresholds 0.50:0.05:0.95 on pre-paired
// instances (no detection matching), per-joint kappa uniform.
ApAr keypoint_ap(const std::vector<Points2>& pred_sets, const std::vector<Points2>& gt_sets,
                 const std::vector<double>& areas, double oks_kappa);

// One dense-correspondence sample: ground truth and predicted surface points.
struct CorrespondencePair {
    SurfaceAnnotation gt;
    BarycentricCoord predicted;
};

using GeodesicFn = std::function<double(int, int)>;

// Geodesic point similarity AP/AR: both surface points snap to their nearest
// template vertex, the error is the mesh geodesic between the two vertices,
// per-instance GPS is the mean of exp(-g^2 / 2 kappa^2).
ApAr densepose_ap(const std::vector<std::vector<CorrespondencePair>>& instances,
                  const MeshTopology& topo, const GeodesicFn& geodesic, double kappa);

// All-pairs geodesic table for small templates.
MatX geodesic_table(const MeshTopology& topo, const Points3& positions);

// Vertex of the face carrying the largest barycentric weight.
int snap_to_vertex(const MeshTopology& topo, const BarycentricCoord& bc);

// Surface point of a posed mesh under a query pixel: the closest-to-camera
// projected face containing the pixel, else the face with the nearest
// boundary; barycentrics are clamped to the face.
BarycentricCoord locate_pixel_on_mesh(const Points3& vertices_px, const MeshTopology& topo,
                                      const Vec2& pixel);

}  // namespace mpk
