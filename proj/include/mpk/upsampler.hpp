#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "mpk/mesh.hpp"
#include "mpk/types.hpp"

namespace mpk {

// Two affine stages, each a per-coordinate linear map plus bias.
struct UpsamplerParams {
    MatX stage1;     // V_mid x V_low
    Points3 bias1;   // V_mid x 3
    MatX stage2;     // V_high x V_mid
    Points3 bias2;   // V_high x 3

    int v_low() const { return static_cast<int>(stage1.cols()); }
    int v_mid() const { return static_cast<int>(stage1.rows()); }
    int v_high() const { return static_cast<int>(stage2.rows()); }
};

UpsamplerParams make_upsampler_params(int v_low, int v_mid, int v_high);

struct UpsampleResult {
    Points3 mid;
    Points3 high;
};

UpsampleResult upsample(const Points3& low, const UpsamplerParams& params);

// Training-time corruption of the low mesh: either multiplicative spikes on a
// random vertex subset or vertex-magnitude-scaled Gaussian noise.
struct NoiseConfig {
    double spike_prob = 0.5;
    double spike_fraction = 0.25;
    double spike_scale = 0.15;
    double gauss_std = 0.05;
    bool additive_spikes = false;  // additive interpretation, off by default
};

Points3 apply_noise(const Points3& low, const NoiseConfig& cfg, std::uint64_t seed);

struct UpsampleSample {
    Points3 low;
    Points3 mid_gt;
    Points3 high_gt;
    Points3 gt_joints;
};

struct UpsamplerTrainConfig {
    int epochs = 400;
    double lr = 1e-2;
    double lr_decay = 1.0;  // per-epoch multiplier
    bool use_noise = true;
    NoiseConfig noise;
    std::uint64_t seed = 1;
};

// Full-batch gradient descent on L1(mid) + L1(high) + L1(joints of high).
// The landmarker maps high vertices to joints.
UpsamplerParams train_upsampler(const std::vector<UpsampleSample>& dataset, const Landmarker& lm,
                                const UpsamplerTrainConfig& cfg);

double upsampler_l1(const UpsamplerParams& params, const std::vector<UpsampleSample>& dataset,
                    const Landmarker& lm);

// Non-learned baseline: every high vertex rides a fixed barycentric point of
// one low face plus an offset along that face's normal, bound on rest poses.
struct VertexBinding {
    int face = -1;
    std::array<double, 3> weights{0, 0, 0};
    double normal_offset = 0.0;
};

std::vector<VertexBinding> bind_vertices(const MeshTopology& low_topo, const Points3& low_rest,
                                         const Points3& high_rest);

Points3 nearest_upsample(const Points3& low_posed, const MeshTopology& low_topo,
                         const std::vector<VertexBinding>& bindings);

// Closest point of a 3D triangle to p, returned in barycentric form.
std::array<double, 3> closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b,
                                                const Vec3& c);

}  // namespace mpk
