#include "mpk/losses.hpp"

#include <algorithm>
#include <cmath>

#include "mpk/errors.hpp"

namespace mpk {

namespace {

constexpr double kLogClamp = 1e-30;
constexpr double kNormEps = 1e-12;

Vec3 row3(const Points3& m, int i) { return Vec3(m(i, 0), m(i, 1), m(i, 2)); }

void add_row3(Tensor& grad, int i, const Vec3& g) {
    grad.at(i, 0) += g.x();
    grad.at(i, 1) += g.y();
    grad.at(i, 2) += g.z();
}

}  // namespace

LossValue barycentric_cross_entropy(const VecX& scores_at_pixel, const SurfaceAnnotation& ann,
                                    const MeshTopology& topo) {
    if (!scores_at_pixel.allFinite()) throw NonFiniteInput("scores non-finite");
    validate_barycentric(ann.bc, topo);
    if (scores_at_pixel.size() != topo.vertex_count)
        throw ShapeMismatch("scores must have one entry per vertex");

    const VecX q = stable_softmax(scores_at_pixel);
    VecX p = VecX::Zero(q.size());
    const auto& tri = topo.faces[ann.bc.face];
    for (int m = 0; m < 3; ++m) p(tri[m]) += ann.bc.weights[m];

    double value = 0.0;
    for (Eigen::Index v = 0; v < q.size(); ++v)
        if (p(v) > 0.0) value -= p(v) * std::log(std::max(q(v), kLogClamp));

    LossValue loss;
    loss.value = value;
    loss.gradients["scores"] = Tensor::from_vector(q - p);
    return loss;
}

LossValue uv_consistency_loss(const HeatmapStack& heatmaps, const SurfaceAnnotation& ann,
                              const MeshTopology& topo) {
    validate_barycentric(ann.bc, topo);
    if (heatmaps.vertex_count() != topo.vertex_count)
        throw ShapeMismatch("heatmap stack must cover every vertex");
    const auto& tri = topo.faces[ann.bc.face];

    MatX channels[3];
    Vec2 located[3];
    for (int m = 0; m < 3; ++m) {
        channels[m] = heatmaps.channel(tri[m]);
        located[m] = argsoftmax2d(channels[m], heatmaps.alpha);
    }
    Vec2 recon = Vec2::Zero();
    for (int m = 0; m < 3; ++m) recon += ann.bc.weights[m] * located[m];

    const Vec2 d = recon - ann.pixel;
    const double value = std::sqrt(d.squaredNorm() + kNormEps);

    LossValue loss;
    loss.value = value;
    Tensor grad(heatmaps.scores.dims);
    const Vec2 dL_drecon = d / value;
    for (int m = 0; m < 3; ++m) {
        const MatX g = argsoftmax2d_backward(channels[m], heatmaps.alpha,
                                             ann.bc.weights[m] * dL_drecon);
        for (int y = 0; y < heatmaps.height(); ++y)
            for (int x = 0; x < heatmaps.width(); ++x)
                grad.at(y, x, tri[m]) += g(y, x);
    }
    loss.gradients["heatmaps"] = std::move(grad);
    return loss;
}

LossValue visibility_bce(const VecX& visibility, const std::vector<VisLabel>& labels) {
    if (visibility.size() != static_cast<Eigen::Index>(labels.size()))
        throw ShapeMismatch("one label per vertex expected");
    int labeled = 0;
    for (const VisLabel l : labels)
        if (l != VisLabel::Unlabeled) ++labeled;
    if (labeled == 0) throw NoLabeledVertices("all vertices unlabeled");

    constexpr double kClamp = 1e-7;
    double value = 0.0;
    VecX grad = VecX::Zero(visibility.size());
    for (Eigen::Index v = 0; v < visibility.size(); ++v) {
        if (labels[v] == VisLabel::Unlabeled) continue;
        const double w = std::clamp(visibility(v), kClamp, 1.0 - kClamp);
        if (labels[v] == VisLabel::Visible) {
            value -= std::log(w);
            grad(v) = -1.0 / w / labeled;
        } else {
            value -= std::log(1.0 - w);
            grad(v) = 1.0 / (1.0 - w) / labeled;
        }
    }
    LossValue loss;
    loss.value = value / labeled;
    loss.gradients["visibility"] = Tensor::from_vector(grad);
    return loss;
}

namespace {

// Accumulate the gradient of (g . n) over the corners of the face whose
// unnormalized normal is n = (b-a) x (c-a).
void accumulate_normal_chain(Tensor& grad, const std::array<int, 3>& tri, const Vec3& a,
                             const Vec3& b, const Vec3& c, const Vec3& g) {
    add_row3(grad, tri[0], (b - c).cross(g));
    add_row3(grad, tri[1], (c - a).cross(g));
    add_row3(grad, tri[2], (a - b).cross(g));
}

Vec3 face_normal(const Points3& pts, const std::array<int, 3>& tri) {
    const Vec3 a = row3(pts, tri[0]), b = row3(pts, tri[1]), c = row3(pts, tri[2]);
    return (b - a).cross(c - a);
}

}  // namespace

GeometricLosses geometric_losses(const Points3& pred, const Points3& gt,
                                 const MeshTopology& topo, const GeometricLossConfig& config) {
    if (pred.rows() != gt.rows() || pred.rows() != topo.vertex_count)
        throw ShapeMismatch("pred/gt must both be V x 3");
    const int v_count = topo.vertex_count;

    GeometricLosses out;

    // Vertex localization: mean squared distance.
    {
        Tensor grad({static_cast<std::size_t>(v_count), 3});
        double value = 0.0;
        for (int v = 0; v < v_count; ++v) {
            const Vec3 d = row3(pred, v) - row3(gt, v);
            value += d.squaredNorm();
            add_row3(grad, v, 2.0 * d / v_count);
        }
        out.vertex.value = value / v_count;
        out.vertex.gradients["pred"] = std::move(grad);
    }

    // Edge length distortion.
    {
        Tensor grad({static_cast<std::size_t>(v_count), 3});
        double value = 0.0;
        const double e_count = static_cast<double>(topo.edges.size());
        for (const auto& [i, j] : topo.edges) {
            const Vec3 ep = row3(pred, i) - row3(pred, j);
            const double lp = std::sqrt(ep.squaredNorm() + kNormEps);
            const double lg = (row3(gt, i) - row3(gt, j)).norm();
            const double diff = lp - lg;
            double dvalue, ddiff;
            if (config.edge == EdgeLossKind::L1) {
                dvalue = std::abs(diff);
                ddiff = diff >= 0.0 ? 1.0 : -1.0;
            } else {
                dvalue = diff * diff;
                ddiff = 2.0 * diff;
            }
            value += dvalue;
            const Vec3 dl_dei = ep / lp * (ddiff / e_count);
            add_row3(grad, i, dl_dei);
            add_row3(grad, j, -dl_dei);
        }
        out.edge.value = value / e_count;
        out.edge.gradients["pred"] = std::move(grad);
    }

    // Normal deviation: 1 - cos between unit normals.
    {
        Tensor grad({static_cast<std::size_t>(v_count), 3});
        double value = 0.0;
        int used = 0;
        if (config.normal == NormalLossKind::PerFace) {
            std::vector<std::pair<std::size_t, Vec3>> chains;
            for (std::size_t f = 0; f < topo.faces.size(); ++f) {
                const Vec3 np = face_normal(pred, topo.faces[f]);
                const Vec3 ng = face_normal(gt, topo.faces[f]);
                if (np.norm() < 1e-12 || ng.norm() < 1e-12) continue;  // degenerate, skip
                ++used;
                const Vec3 nph = np.normalized(), ngh = ng.normalized();
                value += 1.0 - nph.dot(ngh);
                const Vec3 g = -(ngh - nph.dot(ngh) * nph) / np.norm();
                chains.emplace_back(f, g);
            }
            for (auto& [f, g] : chains) {
                const auto& tri = topo.faces[f];
                accumulate_normal_chain(grad, tri,
                                        row3(pred, tri[0]), row3(pred, tri[1]),
                                        row3(pred, tri[2]), g / std::max(used, 1));
            }
        } else {
            // Area-weighted vertex normals: sum of incident unnormalized face
            // normals, then normalized.
            std::vector<Vec3> np_sum(v_count, Vec3::Zero()), ng_sum(v_count, Vec3::Zero());
            for (const auto& tri : topo.faces) {
                const Vec3 np = face_normal(pred, tri), ng = face_normal(gt, tri);
                for (int m = 0; m < 3; ++m) {
                    np_sum[tri[m]] += np;
                    ng_sum[tri[m]] += ng;
                }
            }
            std::vector<Vec3> gs(v_count, Vec3::Zero());
            std::vector<bool> valid(v_count, false);
            for (int v = 0; v < v_count; ++v) {
                if (np_sum[v].norm() < 1e-12 || ng_sum[v].norm() < 1e-12) continue;
                valid[v] = true;
                ++used;
                const Vec3 nph = np_sum[v].normalized(), ngh = ng_sum[v].normalized();
                value += 1.0 - nph.dot(ngh);
                gs[v] = -(ngh - nph.dot(ngh) * nph) / np_sum[v].norm();
            }
            const double denom = std::max(used, 1);
            for (const auto& tri : topo.faces) {
                const Vec3 a = row3(pred, tri[0]), b = row3(pred, tri[1]), c = row3(pred, tri[2]);
                for (int m = 0; m < 3; ++m) {
                    const int v = tri[m];
                    if (!valid[v]) continue;
                    accumulate_normal_chain(grad, tri, a, b, c, gs[v] / denom);
                }
            }
        }
        out.normal.value = used > 0 ? value / used : 0.0;
        out.normal.gradients["pred"] = std::move(grad);
    }
    return out;
}

LossValue joint_localization_loss(const Points3& pred_vertices, const MatX& gt_joints,
                                  const Landmarker& lm, JointLossMode mode,
                                  const Camera& camera) {
    if (lm.matrix.cols() != pred_vertices.rows())
        throw ShapeMismatch("landmarker width must equal vertex count");
    const int j_count = lm.joint_count();
    if (gt_joints.rows() != j_count)
        throw ShapeMismatch("gt joints must match landmarker joint count");
    const int want_cols = mode == JointLossMode::ThreeD ? 3 : 2;
    if (gt_joints.cols() != want_cols)
        throw ShapeMismatch("gt joints must be J x " + std::to_string(want_cols));
    if (j_count == 0) {
        LossValue empty;
        empty.gradients["pred"] = Tensor({static_cast<std::size_t>(pred_vertices.rows()), 3});
        return empty;
    }

    const Points3 joints = landmark_joints(pred_vertices, lm);
    double value = 0.0;
    MatX dL_djoints = MatX::Zero(j_count, 3);
    for (int j = 0; j < j_count; ++j) {
        if (mode == JointLossMode::ThreeD) {
            const Vec3 d = row3(joints, j) - Vec3(gt_joints.row(j));
            value += d.squaredNorm();
            dL_djoints.row(j) = (2.0 * d / j_count).transpose();
        } else {
            const Vec2 pj = camera.project(row3(joints, j));
            const Vec2 d = pj - Vec2(gt_joints.row(j));
            value += d.squaredNorm();
            dL_djoints(j, 0) = 2.0 * d.x() * camera.scale / j_count;
            dL_djoints(j, 1) = 2.0 * d.y() * camera.scale / j_count;
        }
    }

    LossValue loss;
    loss.value = value / j_count;
    const MatX grad_mat = lm.matrix.transpose() * dL_djoints;  // V x 3
    Tensor grad({static_cast<std::size_t>(pred_vertices.rows()), 3});
    for (Eigen::Index v = 0; v < grad_mat.rows(); ++v)
        for (int a = 0; a < 3; ++a) grad.at(v, a) = grad_mat(v, a);
    loss.gradients["pred"] = std::move(grad);
    return loss;
}

double LossWeights::weight_for(const std::string& name) const {
    if (name == "bl") return bl;
    if (name == "cons") return cons;
    if (name == "vis") return vis;
    if (name == "v") return vertex;
    if (name == "e") return edge;
    if (name == "n") return normal;
    if (name == "j") return joint;
    if (name == "sil_l2") return sil_l2;
    if (name == "sil_bnd") return sil_boundary;
    throw MissingComponent("unknown loss component: " + name);
}

const std::vector<std::string>& total_loss_components() {
    static const std::vector<std::string> names = {"bl", "cons", "vis",    "v",      "e",
                                                   "n",  "j",    "sil_l2", "sil_bnd"};
    return names;
}

LossValue total_loss(const std::map<std::string, LossValue>& components,
                     const LossWeights& weights) {
    LossValue total;
    for (const std::string& name : total_loss_components()) {
        const auto it = components.find(name);
        if (it == components.end()) throw MissingComponent(name);
        const double w = weights.weight_for(name);
        total.value += w * it->second.value;
        for (const auto& [input, grad] : it->second.gradients) {
            auto [slot, inserted] = total.gradients.try_emplace(input, Tensor(grad.dims));
            if (!inserted && !slot->second.same_shape(grad))
                throw ShapeMismatch("gradient shapes for '" + input + "' disagree");
            for (std::size_t i = 0; i < grad.data.size(); ++i)
                slot->second.data[i] += w * grad.data[i];
        }
    }
    return total;
}

}  // namespace mpk
