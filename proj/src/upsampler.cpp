#include "mpk/upsampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mpk/errors.hpp"
#include "mpk/rng.hpp"

namespace mpk {

UpsamplerParams make_upsampler_params(int v_low, int v_mid, int v_high) {
    if (v_low <= 0 || v_mid <= 0 || v_high <= 0)
        throw InvalidConfig("upsampler dims must be positive");
    UpsamplerParams p;
    p.stage1 = MatX::Zero(v_mid, v_low);
    p.bias1 = Points3::Zero(v_mid, 3);
    p.stage2 = MatX::Zero(v_high, v_mid);
    p.bias2 = Points3::Zero(v_high, 3);
    return p;
}

UpsampleResult upsample(const Points3& low, const UpsamplerParams& params) {
    if (low.rows() != params.stage1.cols())
        throw ShapeMismatch("low mesh has " + std::to_string(low.rows()) +
                            " vertices, params expect " + std::to_string(params.stage1.cols()));
    UpsampleResult out;
    out.mid = (params.stage1 * low) + params.bias1;
    out.high = (params.stage2 * out.mid) + params.bias2;
    return out;
}

Points3 apply_noise(const Points3& low, const NoiseConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    Points3 out = low;
    const int v_count = static_cast<int>(low.rows());
    if (v_count == 0) return out;

    if (rng.uniform() < cfg.spike_prob) {
        // Spike branch: perturb a random fraction of the vertices by a
        // relative amount with random sign, per coordinate.
        std::vector<int> order(v_count);
        std::iota(order.begin(), order.end(), 0);
        for (int i = v_count - 1; i > 0; --i)
            std::swap(order[i], order[rng.uniform_int(0, i)]);
        const int n_spike = static_cast<int>(std::lround(cfg.spike_fraction * v_count));
        for (int i = 0; i < n_spike; ++i) {
            const int v = order[i];
            for (int a = 0; a < 3; ++a) {
                const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
                if (cfg.additive_spikes)
                    out(v, a) += sign * cfg.spike_scale * std::abs(low(v, a));
                else
                    out(v, a) *= 1.0 + sign * cfg.spike_scale;
            }
        }
    } else {
        for (int v = 0; v < v_count; ++v) {
            const double mag = low.row(v).norm();
            for (int a = 0; a < 3; ++a) out(v, a) += rng.normal(0.0, cfg.gauss_std * mag);
        }
    }
    return out;
}

namespace {

struct Grads {
    MatX stage1, stage2;
    Points3 bias1, bias2;
};

double sample_loss_and_grads(const UpsamplerParams& p, const Points3& input,
                             const UpsampleSample& sample, const Landmarker& lm, Grads* grads) {
    const Points3 mid = (p.stage1 * input) + p.bias1;
    const Points3 high = (p.stage2 * mid) + p.bias2;

    const double n_mid = static_cast<double>(mid.size());
    const double n_high = static_cast<double>(high.size());

    double loss = 0.0;
    Points3 d_high = Points3::Zero(high.rows(), 3);
    Points3 d_mid = Points3::Zero(mid.rows(), 3);

    for (Eigen::Index i = 0; i < mid.rows(); ++i)
        for (int a = 0; a < 3; ++a) {
            const double diff = mid(i, a) - sample.mid_gt(i, a);
            loss += std::abs(diff) / n_mid;
            d_mid(i, a) += (diff >= 0.0 ? 1.0 : -1.0) / n_mid;
        }
    for (Eigen::Index i = 0; i < high.rows(); ++i)
        for (int a = 0; a < 3; ++a) {
            const double diff = high(i, a) - sample.high_gt(i, a);
            loss += std::abs(diff) / n_high;
            d_high(i, a) += (diff >= 0.0 ? 1.0 : -1.0) / n_high;
        }

    if (lm.joint_count() > 0) {
        const Points3 joints = lm.matrix * high;
        const double n_j = static_cast<double>(joints.size());
        MatX d_joints = MatX::Zero(joints.rows(), 3);
        for (Eigen::Index j = 0; j < joints.rows(); ++j)
            for (int a = 0; a < 3; ++a) {
                const double diff = joints(j, a) - sample.gt_joints(j, a);
                loss += std::abs(diff) / n_j;
                d_joints(j, a) = (diff >= 0.0 ? 1.0 : -1.0) / n_j;
            }
        d_high += lm.matrix.transpose() * d_joints;
    }

    if (grads) {
        grads->stage2 += d_high * mid.transpose();
        grads->bias2 += d_high;
        const Points3 back_mid = d_mid + (p.stage2.transpose() * d_high);
        grads->stage1 += back_mid * input.transpose();
        grads->bias1 += back_mid;
    }
    return loss;
}

}  // namespace

UpsamplerParams train_upsampler(const std::vector<UpsampleSample>& dataset, const Landmarker& lm,
                                const UpsamplerTrainConfig& cfg) {
    if (dataset.empty()) throw EmptyDataset("no training samples");
    const int v_low = static_cast<int>(dataset.front().low.rows());
    const int v_mid = static_cast<int>(dataset.front().mid_gt.rows());
    const int v_high = static_cast<int>(dataset.front().high_gt.rows());
    if (lm.joint_count() > 0 && lm.matrix.cols() != v_high)
        throw ShapeMismatch("landmarker must act on the high mesh");

    UpsamplerParams params = make_upsampler_params(v_low, v_mid, v_high);
    Rng rng(cfg.seed);

    const double initial = upsampler_l1(params, dataset, lm);
    double lr = cfg.lr;
    double last = initial;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Grads grads;
        grads.stage1 = MatX::Zero(v_mid, v_low);
        grads.bias1 = Points3::Zero(v_mid, 3);
        grads.stage2 = MatX::Zero(v_high, v_mid);
        grads.bias2 = Points3::Zero(v_high, 3);

        double epoch_loss = 0.0;
        for (const UpsampleSample& sample : dataset) {
            const Points3 input = cfg.use_noise
                                      ? apply_noise(sample.low, cfg.noise, rng.next_u64())
                                      : sample.low;
            epoch_loss += sample_loss_and_grads(params, input, sample, lm, &grads);
        }
        epoch_loss /= static_cast<double>(dataset.size());
        if (!std::isfinite(epoch_loss)) throw DivergedTraining("loss became non-finite");
        last = epoch_loss;

        const double inv_n = 1.0 / static_cast<double>(dataset.size());
        params.stage1 -= lr * inv_n * grads.stage1;
        params.bias1 -= lr * inv_n * grads.bias1;
        params.stage2 -= lr * inv_n * grads.stage2;
        params.bias2 -= lr * inv_n * grads.bias2;
        lr *= cfg.lr_decay;
    }
    (void)last;
    return params;
}

double upsampler_l1(const UpsamplerParams& params, const std::vector<UpsampleSample>& dataset,
                    const Landmarker& lm) {
    if (dataset.empty()) throw EmptyDataset("no samples");
    double acc = 0.0;
    for (const UpsampleSample& sample : dataset)
        acc += sample_loss_and_grads(params, sample.low, sample, lm, nullptr);
    return acc / static_cast<double>(dataset.size());
}

std::array<double, 3> closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b,
                                                const Vec3& c) {
    // Region walk after Ericson, returned as barycentric weights.
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return {1.0, 0.0, 0.0};

    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return {0.0, 1.0, 0.0};

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        const double t = d1 / (d1 - d3);
        return {1.0 - t, t, 0.0};
    }

    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return {0.0, 0.0, 1.0};

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
        const double t = d2 / (d2 - d6);
        return {1.0 - t, 0.0, t};
    }

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        const double t = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return {0.0, 1.0 - t, t};
    }

    const double denom = 1.0 / (va + vb + vc);
    const double v = vb * denom, w = vc * denom;
    return {1.0 - v - w, v, w};
}

std::vector<VertexBinding> bind_vertices(const MeshTopology& low_topo, const Points3& low_rest,
                                         const Points3& high_rest) {
    if (low_rest.rows() != low_topo.vertex_count) throw ShapeMismatch("low rest must be V x 3");
    std::vector<VertexBinding> bindings(high_rest.rows());
    for (Eigen::Index h = 0; h < high_rest.rows(); ++h) {
        const Vec3 p(high_rest(h, 0), high_rest(h, 1), high_rest(h, 2));
        double best_d2 = std::numeric_limits<double>::infinity();
        VertexBinding best;
        for (std::size_t f = 0; f < low_topo.faces.size(); ++f) {
            const auto& tri = low_topo.faces[f];
            const Vec3 a(low_rest.row(tri[0])), b(low_rest.row(tri[1])), c(low_rest.row(tri[2]));
            const auto w = closest_point_on_triangle(p, a, b, c);
            const Vec3 q = w[0] * a + w[1] * b + w[2] * c;
            const double d2 = (p - q).squaredNorm();
            if (d2 < best_d2) {
                best_d2 = d2;
                best.face = static_cast<int>(f);
                best.weights = w;
                const Vec3 n = (b - a).cross(c - a);
                best.normal_offset = n.norm() > 1e-15 ? (p - q).dot(n.normalized()) : 0.0;
            }
        }
        if (best.face < 0) throw UnboundVertex("vertex " + std::to_string(h));
        bindings[h] = best;
    }
    return bindings;
}

Points3 nearest_upsample(const Points3& low_posed, const MeshTopology& low_topo,
                         const std::vector<VertexBinding>& bindings) {
    if (low_posed.rows() != low_topo.vertex_count) throw ShapeMismatch("low mesh must be V x 3");
    Points3 high(bindings.size(), 3);
    for (std::size_t h = 0; h < bindings.size(); ++h) {
        const VertexBinding& binding = bindings[h];
        if (binding.face < 0 || binding.face >= static_cast<int>(low_topo.faces.size()))
            throw UnboundVertex("vertex " + std::to_string(h) + " has no valid face");
        const auto& tri = low_topo.faces[binding.face];
        const Vec3 a(low_posed.row(tri[0])), b(low_posed.row(tri[1])), c(low_posed.row(tri[2]));
        Vec3 q = binding.weights[0] * a + binding.weights[1] * b + binding.weights[2] * c;
        const Vec3 n = (b - a).cross(c - a);
        if (n.norm() > 1e-15) q += binding.normal_offset * n.normalized();
        high.row(h) = q.transpose();
    }
    return high;
}

}  // namespace mpk
