#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "mpk/losses.hpp"
#include "mpk/metrics.hpp"
#include "mpk/synth.hpp"
#include "mpk/upsampler.hpp"

namespace mpk {

struct OptimConfig {
    double lr = 2.0;
    int steps = 1000;
    double clip_norm = 10.0;
};

struct GradcheckConfig {
    int instances = 20;
    double step = 1e-6;
    double tol_loss = 1e-4;
    double tol_render = 1e-3;
    double sigma = 1.0;  // rasterizer sharpness used by the render check
};

struct MetricConfig {
    double gps_kappa = 0.255;
    double oks_kappa = 0.1;
};

struct UpsamplerRunConfig {
    int basis_count = 8;
    double coeff_std = 0.05;
    int train_samples = 48;
    int test_samples = 12;
    UpsamplerTrainConfig train;
};

struct EvalConfig {
    int scene_count = 20;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    SceneConfig scene;
    LossWeights weights;
    OptimConfig optim;
    GradcheckConfig gradcheck;
    MetricConfig metrics;
    UpsamplerRunConfig upsampler;
    EvalConfig eval;
    double sigma = 0.1;       // fit-time raster sharpness, px^2
    double render_pad = 0.5;  // render crop padding fraction
    int threads = 0;          // 0 = auto
    std::string log_format = "text";
};

ExperimentConfig default_config();
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::json config_to_json(const ExperimentConfig& config);

struct RunReport {
    nlohmann::json body;
    int exit_code = 0;

    std::string dump() const { return body.dump(2) + "\n"; }
    void write(const std::string& path) const;
};

// Scene seeds used by synth/eval/fit: base seed + index.
std::uint64_t scene_seed(const ExperimentConfig& config, int index);

RunReport run_gradcheck(const ExperimentConfig& config);
RunReport run_fit(const ExperimentConfig& config, const std::string& out_dir);
RunReport run_eval(const ExperimentConfig& config, const std::string& predictions_dir,
                   const std::string& out_dir);
RunReport run_synth(const ExperimentConfig& config, const std::string& out_dir);
RunReport run_upsampler_train(const ExperimentConfig& config, const std::string& out_dir);

// FNV-1a (64 bit) over a file's bytes, hex encoded.
std::string file_checksum(const std::string& path);

// Central finite differences of a scalar functional over a flat parameter
// block; the workhorse behind the gradcheck subcommand.
template <typename F>
std::vector<double> central_difference(F&& eval, std::vector<double>& params, double step) {
    std::vector<double> grad(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double keep = params[i];
        params[i] = keep + step;
        const double hi = eval();
        params[i] = keep - step;
        const double lo = eval();
        params[i] = keep;
        grad[i] = (hi - lo) / (2.0 * step);
    }
    return grad;
}

double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& fd);

}  // namespace mpk
