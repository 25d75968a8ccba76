#include "mpk/decode.hpp"

#include <cmath>
#include <limits>

#include "mpk/errors.hpp"

namespace mpk {

MatX HeatmapStack::channel(int v) const {
    MatX m(height(), width());
    for (int y = 0; y < height(); ++y)
        for (int x = 0; x < width(); ++x) m(y, x) = scores.at(y, x, v);
    return m;
}

VecX HeatmapStack::scores_at_pixel(int x, int y) const {
    VecX s(vertex_count());
    for (int v = 0; v < vertex_count(); ++v) s(v) = scores.at(y, x, v);
    return s;
}

HeatmapStack make_heatmap_stack(int height, int width, int vertex_count, double alpha) {
    if (height <= 0 || width <= 0 || vertex_count <= 0 || alpha <= 0.0)
        throw InvalidConfig("heatmap stack dims and alpha must be positive");
    HeatmapStack hs;
    hs.scores = Tensor({static_cast<std::size_t>(height), static_cast<std::size_t>(width),
                        static_cast<std::size_t>(vertex_count)});
    hs.alpha = alpha;
    return hs;
}

VecX stable_softmax(const VecX& scores) {
    if (!scores.allFinite()) throw NonFiniteInput("softmax over non-finite scores");
    const double m = scores.maxCoeff();
    VecX e = (scores.array() - m).exp();
    return e / e.sum();
}

Vec2 argsoftmax2d(const MatX& heatmap, double alpha) {
    if (!heatmap.allFinite()) throw NonFiniteInput("argsoftmax2d over non-finite heatmap");
    if (alpha <= 0.0) throw InvalidConfig("alpha must be positive");
    const double m = heatmap.maxCoeff();
    double z = 0.0, sx = 0.0, sy = 0.0;
    for (Eigen::Index y = 0; y < heatmap.rows(); ++y) {
        for (Eigen::Index x = 0; x < heatmap.cols(); ++x) {
            const double w = std::exp(alpha * (heatmap(y, x) - m));
            z += w;
            sx += w * static_cast<double>(x);
            sy += w * static_cast<double>(y);
        }
    }
    return Vec2(sx / z, sy / z);
}

MatX argsoftmax2d_backward(const MatX& heatmap, double alpha, const Vec2& dL_dxy) {
    const Vec2 mean = argsoftmax2d(heatmap, alpha);
    const double m = heatmap.maxCoeff();
    double z = 0.0;
    MatX p(heatmap.rows(), heatmap.cols());
    for (Eigen::Index y = 0; y < heatmap.rows(); ++y)
        for (Eigen::Index x = 0; x < heatmap.cols(); ++x) {
            p(y, x) = std::exp(alpha * (heatmap(y, x) - m));
            z += p(y, x);
        }
    p /= z;
    MatX grad(heatmap.rows(), heatmap.cols());
    for (Eigen::Index y = 0; y < heatmap.rows(); ++y)
        for (Eigen::Index x = 0; x < heatmap.cols(); ++x) {
            const double gx = static_cast<double>(x) - mean.x();
            const double gy = static_cast<double>(y) - mean.y();
            grad(y, x) = alpha * p(y, x) * (gx * dL_dxy.x() + gy * dL_dxy.y());
        }
    return grad;
}

VecX pixel_posterior(const VecX& scores_at_pixel) {
    return stable_softmax(scores_at_pixel);
}

Vec2 decode_uv(const VecX& posterior, const MeshTopology& topo, UvStrategy strategy) {
    if (topo.faces.empty() || topo.vertex_count == 0) throw EmptyTopology("no faces");
    if (posterior.size() != topo.vertex_count)
        throw ShapeMismatch("posterior size must equal vertex count");

    switch (strategy) {
        case UvStrategy::Nearest: {
            Eigen::Index best = 0;
            posterior.maxCoeff(&best);
            return topo.uv_atlas.row(best);
        }
        case UvStrategy::GlobalAverage: {
            const double total = posterior.sum();
            Vec2 uv = Vec2::Zero();
            for (int v = 0; v < topo.vertex_count; ++v)
                uv += (posterior(v) / total) * Vec2(topo.uv_atlas.row(v));
            return uv;
        }
        case UvStrategy::Barycentric:
            break;
    }

    // Face with the largest cumulative posterior, ties to the lowest index.
    int best_face = 0;
    double best_sum = -std::numeric_limits<double>::infinity();
    for (std::size_t f = 0; f < topo.faces.size(); ++f) {
        const auto& tri = topo.faces[f];
        const double s = posterior(tri[0]) + posterior(tri[1]) + posterior(tri[2]);
        if (s > best_sum) {
            best_sum = s;
            best_face = static_cast<int>(f);
        }
    }
    const auto& tri = topo.faces[best_face];
    Vec2 uv = Vec2::Zero();
    const double denom = std::max(best_sum, 1e-300);
    for (int m = 0; m < 3; ++m)
        uv += (posterior(tri[m]) / denom) * Vec2(topo.uv_atlas.row(tri[m]));
    return uv;
}

RegressionHead make_regression_head(int vertex_count, int bin_count, int height, int width) {
    if (vertex_count <= 0 || bin_count < 2 || height <= 0 || width <= 0)
        throw InvalidConfig("regression head needs V > 0, B >= 2 and positive crop dims");
    RegressionHead head;
    const std::vector<std::size_t> dims{static_cast<std::size_t>(vertex_count),
                                        static_cast<std::size_t>(bin_count)};
    head.logits_x = Tensor(dims);
    head.logits_y = Tensor(dims);
    head.logits_z = Tensor(dims);
    head.visibility_logits = VecX::Zero(vertex_count);
    head.bin_count = bin_count;
    head.height = height;
    head.width = width;
    return head;
}

double bin_to_pixel(Axis axis, double bin, int bin_count, int height, int width) {
    const double t = bin / static_cast<double>(bin_count);
    switch (axis) {
        case Axis::X: return -width + t * (3.0 * width);
        case Axis::Y: return -height + t * (4.0 * height);
        case Axis::Z: return -2.0 * width + t * (4.0 * width);
    }
    return 0.0;
}

double argsoftmax1d(const VecX& logits) {
    const VecX p = stable_softmax(logits);
    double b = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) b += p(i) * (static_cast<double>(i) + 0.5);
    return b;
}

VecX argsoftmax1d_backward(const VecX& logits, double dL_dbin) {
    const VecX p = stable_softmax(logits);
    double mean = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) mean += p(i) * (static_cast<double>(i) + 0.5);
    VecX grad(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i)
        grad(i) = p(i) * ((static_cast<double>(i) + 0.5) - mean) * dL_dbin;
    return grad;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

VecX logits_row(const Tensor& logits, int v) {
    VecX row(logits.dims[1]);
    for (std::size_t b = 0; b < logits.dims[1]; ++b) row(b) = logits.at(v, b);
    return row;
}

}  // namespace

RegressionDecode decode_regression(const RegressionHead& head) {
    const int v_count = static_cast<int>(head.logits_x.dims[0]);
    if (!head.visibility_logits.allFinite())
        throw NonFiniteInput("visibility logits non-finite");
    RegressionDecode out;
    out.positions.resize(v_count, 3);
    out.visibility.resize(v_count);
    const Tensor* blocks[3] = {&head.logits_x, &head.logits_y, &head.logits_z};
    const Axis axes[3] = {Axis::X, Axis::Y, Axis::Z};
    for (int v = 0; v < v_count; ++v) {
        for (int a = 0; a < 3; ++a) {
            const double bin = argsoftmax1d(logits_row(*blocks[a], v));
            out.positions(v, a) = bin_to_pixel(axes[a], bin, head.bin_count, head.height,
                                               head.width);
        }
        out.visibility(v) = sigmoid(head.visibility_logits(v));
    }
    return out;
}

RegressionGrads decode_regression_backward(const RegressionHead& head,
                                           const Points3& dL_dpositions,
                                           const VecX& dL_dvisibility) {
    const int v_count = static_cast<int>(head.logits_x.dims[0]);
    if (dL_dpositions.rows() != v_count || dL_dvisibility.size() != v_count)
        throw ShapeMismatch("gradient shapes must match the head");
    RegressionGrads grads;
    grads.logits_x = Tensor(head.logits_x.dims);
    grads.logits_y = Tensor(head.logits_y.dims);
    grads.logits_z = Tensor(head.logits_z.dims);
    grads.visibility_logits = VecX::Zero(v_count);

    const Tensor* blocks[3] = {&head.logits_x, &head.logits_y, &head.logits_z};
    Tensor* grad_blocks[3] = {&grads.logits_x, &grads.logits_y, &grads.logits_z};
    const Axis axes[3] = {Axis::X, Axis::Y, Axis::Z};
    for (int v = 0; v < v_count; ++v) {
        for (int a = 0; a < 3; ++a) {
            // d(pixel)/d(bin) is the constant range slope.
            const double slope = bin_to_pixel(axes[a], 1.0, head.bin_count, head.height,
                                              head.width) -
                                 bin_to_pixel(axes[a], 0.0, head.bin_count, head.height,
                                              head.width);
            const VecX row = logits_row(*blocks[a], v);
            const VecX g = argsoftmax1d_backward(row, dL_dpositions(v, a) * slope);
            for (int b = 0; b < head.bin_count; ++b) grad_blocks[a]->at(v, b) = g(b);
        }
        const double w = sigmoid(head.visibility_logits(v));
        grads.visibility_logits(v) = dL_dvisibility(v) * w * (1.0 - w);
    }
    return grads;
}

VertexState fuse_predictions(const Points2& sp_xy, const Points3& reg_xyz,
                             const VecX& visibility) {
    const Eigen::Index v_count = sp_xy.rows();
    if (reg_xyz.rows() != v_count || visibility.size() != v_count)
        throw ShapeMismatch("fusion inputs must agree on V");
    for (Eigen::Index v = 0; v < v_count; ++v)
        if (visibility(v) < 0.0 || visibility(v) > 1.0)
            throw VisibilityOutOfRange("visibility must lie in [0,1]");

    VertexState state;
    state.sp_xy = sp_xy;
    state.reg_xyz = reg_xyz;
    state.visibility = visibility;
    state.fused_xyz.resize(v_count, 3);
    for (Eigen::Index v = 0; v < v_count; ++v) {
        const double w = visibility(v);
        state.fused_xyz(v, 0) = w * sp_xy(v, 0) + (1.0 - w) * reg_xyz(v, 0);
        state.fused_xyz(v, 1) = w * sp_xy(v, 1) + (1.0 - w) * reg_xyz(v, 1);
        state.fused_xyz(v, 2) = reg_xyz(v, 2);
    }
    return state;
}

FusionGrads fuse_predictions_backward(const Points2& sp_xy, const Points3& reg_xyz,
                                      const VecX& visibility, const Points3& dL_dfused) {
    const Eigen::Index v_count = sp_xy.rows();
    if (dL_dfused.rows() != v_count) throw ShapeMismatch("fused gradient must have V rows");
    FusionGrads grads;
    grads.sp_xy = Points2::Zero(v_count, 2);
    grads.reg_xyz = Points3::Zero(v_count, 3);
    grads.visibility = VecX::Zero(v_count);
    for (Eigen::Index v = 0; v < v_count; ++v) {
        const double w = visibility(v);
        for (int a = 0; a < 2; ++a) {
            grads.sp_xy(v, a) = dL_dfused(v, a) * w;
            grads.reg_xyz(v, a) = dL_dfused(v, a) * (1.0 - w);
            grads.visibility(v) += dL_dfused(v, a) * (sp_xy(v, a) - reg_xyz(v, a));
        }
        grads.reg_xyz(v, 2) = dL_dfused(v, 2);
    }
    return grads;
}

}  // namespace mpk
