#include "mpk/metrics.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>

#include "mpk/errors.hpp"
#include "mpk/geom2d.hpp"

namespace mpk {

namespace {

const std::vector<double>& score_thresholds() {
    static const std::vector<double> t = {0.50, 0.55, 0.60, 0.65, 0.70,
                                          0.75, 0.80, 0.85, 0.90, 0.95};
    return t;
}

Vec3 row3(const Points3& m, Eigen::Index i) { return Vec3(m(i, 0), m(i, 1), m(i, 2)); }

// Fraction of instances whose score clears each threshold, averaged. Scores
// within rounding distance of a threshold count as passing it.
ApAr threshold_average(const std::vector<double>& scores) {
    constexpr double kEdgeTol = 1e-9;
    ApAr out;
    if (scores.empty()) return out;
    double acc = 0.0;
    for (double t : score_thresholds()) {
        int hit = 0;
        for (double s : scores)
            if (s >= t - kEdgeTol) ++hit;
        acc += static_cast<double>(hit) / scores.size();
    }
    out.ap = acc / score_thresholds().size();
    out.ar = out.ap;  // pre-paired instances: recall equals precision
    return out;
}

}  // namespace

Points3 AlignmentTransform::apply(const Points3& pts) const {
    Points3 out(pts.rows(), 3);
    for (Eigen::Index i = 0; i < pts.rows(); ++i)
        out.row(i) = apply(Vec3(pts.row(i))).transpose();
    return out;
}

AlignmentTransform procrustes_align(const Points3& pred, const Points3& gt) {
    const Eigen::Index n = pred.rows();
    if (gt.rows() != n) throw ShapeMismatch("pred and gt must have the same point count");
    if (n < 3) throw DegenerateConfiguration("need at least 3 points");

    const Vec3 mu_p = pred.colwise().mean();
    const Vec3 mu_g = gt.colwise().mean();

    Mat3 cov = Mat3::Zero();
    double var_p = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec3 xp = row3(pred, i) - mu_p;
        const Vec3 xg = row3(gt, i) - mu_g;
        cov += xg * xp.transpose();
        var_p += xp.squaredNorm();
    }
    cov /= static_cast<double>(n);
    var_p /= static_cast<double>(n);
    if (var_p < 1e-18) throw DegenerateConfiguration("pred points are coincident");

    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 sv = svd.singularValues();
    if (sv(1) < 1e-12 * std::max(sv(0), 1e-300))
        throw DegenerateConfiguration("point sets are (near) collinear");

    Mat3 sign_fix = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) sign_fix(2, 2) = -1.0;

    AlignmentTransform tf;
    tf.rotation = svd.matrixU() * sign_fix * svd.matrixV().transpose();
    tf.scale = (sv(0) + sv(1) + sign_fix(2, 2) * sv(2)) / var_p;
    tf.translation = mu_g - tf.scale * (tf.rotation * mu_p);
    return tf;
}

double alignment_residual(const AlignmentTransform& tf, const Points3& pred, const Points3& gt) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < pred.rows(); ++i)
        acc += (tf.apply(row3(pred, i)) - row3(gt, i)).squaredNorm();
    return acc / static_cast<double>(pred.rows());
}

PoseMetrics pose_metrics(const Points3& pred_joints, const Points3& gt_joints,
                         const Points3& pred_vertices, const Points3& gt_vertices,
                         int root_index, double unit_to_mm) {
    if (pred_joints.rows() != gt_joints.rows() || pred_vertices.rows() != gt_vertices.rows())
        throw ShapeMismatch("joint/vertex sets must pair up");
    if (root_index < 0 || root_index >= pred_joints.rows())
        throw IndexOutOfRange("root joint index out of range");

    const Vec3 root_p = row3(pred_joints, root_index);
    const Vec3 root_g = row3(gt_joints, root_index);

    double mpjpe = 0.0;
    for (Eigen::Index j = 0; j < pred_joints.rows(); ++j)
        mpjpe += ((row3(pred_joints, j) - root_p) - (row3(gt_joints, j) - root_g)).norm();
    mpjpe /= static_cast<double>(pred_joints.rows());

    const AlignmentTransform tf = procrustes_align(pred_joints, gt_joints);
    double pa = 0.0;
    for (Eigen::Index j = 0; j < pred_joints.rows(); ++j)
        pa += (tf.apply(row3(pred_joints, j)) - row3(gt_joints, j)).norm();
    pa /= static_cast<double>(pred_joints.rows());

    double pve = 0.0;
    for (Eigen::Index v = 0; v < pred_vertices.rows(); ++v)
        pve += ((row3(pred_vertices, v) - root_p) - (row3(gt_vertices, v) - root_g)).norm();
    pve /= std::max<double>(1.0, static_cast<double>(pred_vertices.rows()));

    return PoseMetrics{mpjpe * unit_to_mm, pa * unit_to_mm, pve * unit_to_mm};
}

ApAr keypoint_ap(const std::vector<Points2>& pred_sets, const std::vector<Points2>& gt_sets,
                 const std::vector<double>& areas, double oks_kappa) {
    if (gt_sets.empty()) throw NoInstances("no ground-truth instances");
    if (pred_sets.size() != gt_sets.size() || areas.size() != gt_sets.size())
        throw ShapeMismatch("instance lists must pair up");

    std::vector<double> oks(gt_sets.size());
    for (std::size_t i = 0; i < gt_sets.size(); ++i) {
        if (pred_sets[i].rows() != gt_sets[i].rows())
            throw ShapeMismatch("keypoint counts must match per instance");
        if (areas[i] <= 0.0) throw InvalidConfig("instance area must be positive");
        double acc = 0.0;
        for (Eigen::Index j = 0; j < gt_sets[i].rows(); ++j) {
            const double d2 = (pred_sets[i].row(j) - gt_sets[i].row(j)).squaredNorm();
            acc += std::exp(-d2 / (2.0 * areas[i] * oks_kappa * oks_kappa));
        }
        oks[i] = gt_sets[i].rows() > 0 ? acc / gt_sets[i].rows() : 0.0;
    }
    return threshold_average(oks);
}

ApAr densepose_ap(const std::vector<std::vector<CorrespondencePair>>& instances,
                  const MeshTopology& topo, const GeodesicFn& geodesic, double kappa) {
    if (instances.empty()) throw NoInstances("no instances");
    std::vector<double> gps(instances.size());
    for (std::size_t i = 0; i < instances.size(); ++i) {
        if (instances[i].empty()) throw EmptyInstance("instance " + std::to_string(i));
        double acc = 0.0;
        for (const CorrespondencePair& pair : instances[i]) {
            const int gt_v = snap_to_vertex(topo, pair.gt.bc);
            const int pred_v = snap_to_vertex(topo, pair.predicted);
            const double g = geodesic(gt_v, pred_v);
            acc += std::exp(-(g * g) / (2.0 * kappa * kappa));
        }
        gps[i] = acc / instances[i].size();
    }
    return threshold_average(gps);
}

MatX geodesic_table(const MeshTopology& topo, const Points3& positions) {
    MatX table(topo.vertex_count, topo.vertex_count);
    for (int v = 0; v < topo.vertex_count; ++v)
        table.row(v) = geodesic_distances_from(topo, positions, v).transpose();
    return table;
}

int snap_to_vertex(const MeshTopology& topo, const BarycentricCoord& bc) {
    validate_barycentric(bc, topo);
    const auto& tri = topo.faces[bc.face];
    int best = tri[0];
    double best_w = bc.weights[0];
    for (int m = 1; m < 3; ++m)
        if (bc.weights[m] > best_w) {
            best_w = bc.weights[m];
            best = tri[m];
        }
    return best;
}

BarycentricCoord locate_pixel_on_mesh(const Points3& vertices_px, const MeshTopology& topo,
                                      const Vec2& pixel) {
    if (vertices_px.rows() != topo.vertex_count) throw ShapeMismatch("vertices must be V x 3");
    if (topo.faces.empty()) throw EmptyTopology("no faces");

    int best_containing = -1;
    double best_depth = -std::numeric_limits<double>::infinity();
    int best_near = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t f = 0; f < topo.faces.size(); ++f) {
        const auto& tri = topo.faces[f];
        const Vec2 a(vertices_px(tri[0], 0), vertices_px(tri[0], 1));
        const Vec2 b(vertices_px(tri[1], 0), vertices_px(tri[1], 1));
        const Vec2 c(vertices_px(tri[2], 0), vertices_px(tri[2], 1));
        if (std::abs(signed_area2(a, b, c)) < 1e-12) continue;
        if (point_in_triangle(pixel, a, b, c)) {
            const double depth =
                (vertices_px(tri[0], 2) + vertices_px(tri[1], 2) + vertices_px(tri[2], 2)) / 3.0;
            if (depth > best_depth) {
                best_depth = depth;
                best_containing = static_cast<int>(f);
            }
        } else if (best_containing < 0) {
            const double d2 = closest_boundary_point(pixel, a, b, c).dist2;
            if (d2 < best_d2) {
                best_d2 = d2;
                best_near = static_cast<int>(f);
            }
        }
    }

    const int face = best_containing >= 0 ? best_containing : best_near;
    if (face < 0) throw DegenerateConfiguration("mesh projects to zero area");
    const auto& tri = topo.faces[face];
    const Vec2 a(vertices_px(tri[0], 0), vertices_px(tri[0], 1));
    const Vec2 b(vertices_px(tri[1], 0), vertices_px(tri[1], 1));
    const Vec2 c(vertices_px(tri[2], 0), vertices_px(tri[2], 1));
    const ClampedBarycentric cb = clamped_barycentric(pixel, a, b, c);
    BarycentricCoord bc;
    bc.face = face;
    bc.weights = cb.weights;
    // Guard against tiny negatives from the area ratios.
    for (double& w : bc.weights) w = std::max(w, 0.0);
    const double sum = bc.weights[0] + bc.weights[1] + bc.weights[2];
    for (double& w : bc.weights) w /= sum;
    return bc;
}

}  // namespace mpk
