#include "mpk/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <vector>

#include "mpk/errors.hpp"
#include "mpk/image_io.hpp"
#include "mpk/rng.hpp"
#include "mpk/softras.hpp"
#include "mpk/thread.hpp"

namespace mpk {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

namespace {

template <typename T>
void maybe(const json& j, const char* key, T& slot) {
    if (j.contains(key)) slot = j.at(key).get<T>();
}

void require_positive(double v, const char* what) {
    if (!(v > 0.0)) throw InvalidConfig(std::string(what) + " must be positive");
}

}  // namespace

ExperimentConfig default_config() { return ExperimentConfig{}; }

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    maybe(j, "seed", c.seed);
    if (j.contains("scene")) {
        const json& s = j.at("scene");
        maybe(s, "height", c.scene.height);
        maybe(s, "width", c.scene.width);
        maybe(s, "annotation_count", c.scene.annotation_count);
        maybe(s, "pose_amplitude", c.scene.pose_amplitude);
        maybe(s, "heatmap_std", c.scene.heatmap_std);
        maybe(s, "margin", c.scene.margin);
        maybe(s, "alpha", c.scene.alpha);
        maybe(s, "unit_to_mm", c.scene.unit_to_mm);
    }
    if (j.contains("loss_weights")) {
        const json& w = j.at("loss_weights");
        maybe(w, "w_bl", c.weights.bl);
        maybe(w, "w_cons", c.weights.cons);
        maybe(w, "w_vis", c.weights.vis);
        maybe(w, "w_v", c.weights.vertex);
        maybe(w, "w_e", c.weights.edge);
        maybe(w, "w_n", c.weights.normal);
        maybe(w, "w_j", c.weights.joint);
        maybe(w, "w_sil_l2", c.weights.sil_l2);
        maybe(w, "w_sil_bnd", c.weights.sil_boundary);
    }
    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        maybe(o, "lr", c.optim.lr);
        maybe(o, "steps", c.optim.steps);
        maybe(o, "clip_norm", c.optim.clip_norm);
    }
    if (j.contains("gradcheck")) {
        const json& g = j.at("gradcheck");
        maybe(g, "instances", c.gradcheck.instances);
        maybe(g, "step", c.gradcheck.step);
        maybe(g, "tol_loss", c.gradcheck.tol_loss);
        maybe(g, "tol_render", c.gradcheck.tol_render);
        maybe(g, "sigma", c.gradcheck.sigma);
    }
    if (j.contains("metrics")) {
        const json& m = j.at("metrics");
        maybe(m, "gps_kappa", c.metrics.gps_kappa);
        maybe(m, "oks_kappa", c.metrics.oks_kappa);
    }
    if (j.contains("upsampler")) {
        const json& u = j.at("upsampler");
        maybe(u, "basis_count", c.upsampler.basis_count);
        maybe(u, "coeff_std", c.upsampler.coeff_std);
        maybe(u, "train_samples", c.upsampler.train_samples);
        maybe(u, "test_samples", c.upsampler.test_samples);
        maybe(u, "epochs", c.upsampler.train.epochs);
        maybe(u, "lr", c.upsampler.train.lr);
        maybe(u, "lr_decay", c.upsampler.train.lr_decay);
        maybe(u, "use_noise", c.upsampler.train.use_noise);
        maybe(u, "train_seed", c.upsampler.train.seed);
        maybe(u, "spike_prob", c.upsampler.train.noise.spike_prob);
        maybe(u, "spike_fraction", c.upsampler.train.noise.spike_fraction);
        maybe(u, "spike_scale", c.upsampler.train.noise.spike_scale);
        maybe(u, "gauss_std", c.upsampler.train.noise.gauss_std);
    }
    if (j.contains("eval")) maybe(j.at("eval"), "scene_count", c.eval.scene_count);
    maybe(j, "sigma", c.sigma);
    maybe(j, "render_pad", c.render_pad);
    maybe(j, "threads", c.threads);
    maybe(j, "log", c.log_format);

    require_positive(c.scene.heatmap_std, "scene.heatmap_std");
    require_positive(c.scene.alpha, "scene.alpha");
    require_positive(c.sigma, "sigma");
    require_positive(c.gradcheck.step, "gradcheck.step");
    if (c.optim.steps < 0 || c.gradcheck.instances < 1 || c.eval.scene_count < 1)
        throw InvalidConfig("counts out of range");
    if (c.optim.lr < 0.0) throw InvalidConfig("optimizer.lr must be nonnegative");
    if (c.render_pad < 0.0 || c.render_pad > 2.0)
        throw InvalidConfig("render_pad out of range");
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InvalidConfig("config parse error: " + std::string(e.what()));
    }
    return config_from_json(j);
}

json config_to_json(const ExperimentConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["scene"] = {{"height", c.scene.height},
                  {"width", c.scene.width},
                  {"annotation_count", c.scene.annotation_count},
                  {"pose_amplitude", c.scene.pose_amplitude},
                  {"heatmap_std", c.scene.heatmap_std},
                  {"margin", c.scene.margin},
                  {"alpha", c.scene.alpha},
                  {"unit_to_mm", c.scene.unit_to_mm}};
    j["loss_weights"] = {{"w_bl", c.weights.bl},       {"w_cons", c.weights.cons},
                         {"w_vis", c.weights.vis},     {"w_v", c.weights.vertex},
                         {"w_e", c.weights.edge},      {"w_n", c.weights.normal},
                         {"w_j", c.weights.joint},     {"w_sil_l2", c.weights.sil_l2},
                         {"w_sil_bnd", c.weights.sil_boundary}};
    j["optimizer"] = {{"lr", c.optim.lr}, {"steps", c.optim.steps},
                      {"clip_norm", c.optim.clip_norm}};
    j["gradcheck"] = {{"instances", c.gradcheck.instances},
                      {"step", c.gradcheck.step},
                      {"tol_loss", c.gradcheck.tol_loss},
                      {"tol_render", c.gradcheck.tol_render},
                      {"sigma", c.gradcheck.sigma}};
    j["metrics"] = {{"gps_kappa", c.metrics.gps_kappa}, {"oks_kappa", c.metrics.oks_kappa}};
    j["upsampler"] = {{"basis_count", c.upsampler.basis_count},
                      {"coeff_std", c.upsampler.coeff_std},
                      {"train_samples", c.upsampler.train_samples},
                      {"test_samples", c.upsampler.test_samples},
                      {"epochs", c.upsampler.train.epochs},
                      {"lr", c.upsampler.train.lr},
                      {"lr_decay", c.upsampler.train.lr_decay},
                      {"use_noise", c.upsampler.train.use_noise},
                      {"train_seed", c.upsampler.train.seed},
                      {"spike_prob", c.upsampler.train.noise.spike_prob},
                      {"spike_fraction", c.upsampler.train.noise.spike_fraction},
                      {"spike_scale", c.upsampler.train.noise.spike_scale},
                      {"gauss_std", c.upsampler.train.noise.gauss_std}};
    j["eval"] = {{"scene_count", c.eval.scene_count}};
    j["sigma"] = c.sigma;
    j["render_pad"] = c.render_pad;
    j["threads"] = c.threads;
    j["log"] = c.log_format;
    return j;
}

void RunReport::write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report: " + path);
    out << dump();
}

std::uint64_t scene_seed(const ExperimentConfig& config, int index) {
    return config.seed + static_cast<std::uint64_t>(index);
}

std::string file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot checksum: " + path);
    std::uint64_t h = 14695981039346656037ULL;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ULL;
        }
        if (!in) break;
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return std::string("fnv1a:") + hex;
}

double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& fd) {
    if (analytic.size() != fd.size()) throw ShapeMismatch("gradient sizes differ");
    double max_abs = 1e-10, max_diff = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        max_abs = std::max({max_abs, std::abs(analytic[i]), std::abs(fd[i])});
        max_diff = std::max(max_diff, std::abs(analytic[i] - fd[i]));
    }
    return max_diff / max_abs;
}

// ---------------------------------------------------------------------------
// Gradient checks

namespace {

SurfaceAnnotation random_annotation(Rng& rng, const MeshTopology& topo, double pixel_span) {
    SurfaceAnnotation ann;
    ann.bc.face = rng.uniform_int(0, static_cast<int>(topo.faces.size()) - 1);
    const double su = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    ann.bc.weights = {1.0 - su, su * (1.0 - r2), su * r2};
    ann.pixel = Vec2(rng.uniform(0.0, pixel_span), rng.uniform(0.0, pixel_span));
    return ann;
}

Points3 random_points(Rng& rng, const Points3& base, double noise) {
    Points3 out = base;
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        for (int a = 0; a < 3; ++a) out(i, a) += noise * rng.normal();
    return out;
}

std::vector<double> tensor_to_vec(const Tensor& t) { return t.data; }

struct CheckRow {
    std::string name;
    double max_rel = 0.0;
    double tolerance = 0.0;
};

}  // namespace

RunReport run_gradcheck(const ExperimentConfig& config) {
    const auto t_start = std::chrono::steady_clock::now();
    const TemplateMesh sheet = make_grid_sheet(3, 3, 1.0, 0.3);
    const MeshTopology& topo = sheet.topology;
    const int v_count = topo.vertex_count;
    const int n_inst = config.gradcheck.instances;
    const double step = config.gradcheck.step;

    std::vector<CheckRow> rows;
    const auto record = [&rows](const std::string& name, double rel, double tol) {
        rows.push_back({name, rel, tol});
    };

    // Barycentric cross entropy wrt pixel scores.
    {
        double worst = 0.0;
        for (int i = 0; i < n_inst; ++i) {
            Rng rng(config.seed * 1000 + i);
            const SurfaceAnnotation ann = random_annotation(rng, topo, 4.0);
            std::vector<double> scores(v_count);
            for (double& s : scores) s = 2.0 * rng.normal();
            const auto eval = [&]() {
                VecX s = Eigen::Map<const VecX>(scores.data(), v_count);
                return barycentric_cross_entropy(s, ann, topo).value;
            };
            VecX s = Eigen::Map<const VecX>(scores.data(), v_count);
            const LossValue loss = barycentric_cross_entropy(s, ann, topo);
            const auto fd = central_difference(eval, scores, step);
            worst = std::max(worst,
                             max_relative_error(tensor_to_vec(loss.gradients.at("scores")), fd));
        }
        record("barycentric_ce", worst, config.gradcheck.tol_loss);
    }

    // UV consistency wrt the heatmap stack.
    {
        double worst = 0.0;
        for (int i = 0; i < n_inst; ++i) {
            Rng rng(config.seed * 2000 + i);
            HeatmapStack hs = make_heatmap_stack(6, 6, v_count, 1.0);
            for (double& s : hs.scores.data) s = rng.normal();
            const SurfaceAnnotation ann = random_annotation(rng, topo, 5.0);
            const auto eval = [&]() { return uv_consistency_loss(hs, ann, topo).value; };
            const LossValue loss = uv_consistency_loss(hs, ann, topo);
            const auto fd = central_difference(eval, hs.scores.data, step);
            worst = std::max(
                worst, max_relative_error(tensor_to_vec(loss.gradients.at("heatmaps")), fd));
        }
        record("uv_consistency", worst, config.gradcheck.tol_loss);
    }

    // Visibility BCE wrt the visibility vector.
    {
        double worst = 0.0;
        for (int i = 0; i < n_inst; ++i) {
            Rng rng(config.seed * 3000 + i);
            std::vector<double> w(v_count);
            for (double& x : w) x = rng.uniform(0.05, 0.95);
            std::vector<VisLabel> labels(v_count, VisLabel::Unlabeled);
            int labeled = 0;
            for (auto& l : labels) {
                const int pick = rng.uniform_int(0, 2);
                l = static_cast<VisLabel>(pick);
                if (l != VisLabel::Unlabeled) ++labeled;
            }
            if (labeled == 0) labels[0] = VisLabel::Visible;
            const auto eval = [&]() {
                VecX wv = Eigen::Map<const VecX>(w.data(), v_count);
                return visibility_bce(wv, labels).value;
            };
            VecX wv = Eigen::Map<const VecX>(w.data(), v_count);
            const LossValue loss = visibility_bce(wv, labels);
            const auto fd = central_difference(eval, w, step);
            worst = std::max(
                worst, max_relative_error(tensor_to_vec(loss.gradients.at("visibility")), fd));
        }
        record("visibility_bce", worst, config.gradcheck.tol_loss);
    }

    // Geometric losses and their weighted total wrt pred.
    {
        double worst_v = 0.0, worst_e = 0.0, worst_n = 0.0, worst_total = 0.0, worst_j = 0.0;
        for (int i = 0; i < n_inst; ++i) {
            Rng rng(config.seed * 4000 + i);
            const Points3 gt = random_points(rng, topo.rest_positions, 0.05);
            Points3 pred0 = random_points(rng, topo.rest_positions, 0.15);
            std::vector<double> params(pred0.data(), pred0.data() + pred0.size());
            const auto as_points = [&]() {
                Points3 p(v_count, 3);
                std::copy(params.begin(), params.end(), p.data());
                return p;
            };

            // Random 3-joint landmarker over the sheet.
            MatX lmw = MatX::Zero(3, v_count);
            for (int jrow = 0; jrow < 3; ++jrow) {
                const int a = rng.uniform_int(0, v_count - 1);
                int b = rng.uniform_int(0, v_count - 1);
                while (b == a) b = rng.uniform_int(0, v_count - 1);
                lmw(jrow, a) = 0.6;
                lmw(jrow, b) = 0.4;
            }
            const Landmarker lm = make_landmarker(lmw);
            const JointLossMode mode =
                i % 2 == 0 ? JointLossMode::ThreeD : JointLossMode::Projected2D;
            Camera cam;
            cam.scale = 2.0;
            cam.principal = Vec2(1.0, 2.0);
            MatX gt_joints;
            if (mode == JointLossMode::ThreeD) {
                gt_joints = landmark_joints(gt, lm);
            } else {
                gt_joints = MatX(3, 2);
                const Points3 j3 = landmark_joints(gt, lm);
                for (int jrow = 0; jrow < 3; ++jrow)
                    gt_joints.row(jrow) = cam.project(Vec3(j3.row(jrow))).transpose();
            }

            const LossWeights weights;
            const auto eval_geo = [&](int which) {
                return [&, which]() {
                    const Points3 p = as_points();
                    const GeometricLosses g = geometric_losses(p, gt, topo);
                    if (which == 0) return g.vertex.value;
                    if (which == 1) return g.edge.value;
                    return g.normal.value;
                };
            };
            const GeometricLosses g = geometric_losses(as_points(), gt, topo);
            {
                auto f = eval_geo(0);
                worst_v = std::max(worst_v,
                                   max_relative_error(tensor_to_vec(g.vertex.gradients.at("pred")),
                                                      central_difference(f, params, step)));
            }
            {
                auto f = eval_geo(1);
                worst_e = std::max(worst_e,
                                   max_relative_error(tensor_to_vec(g.edge.gradients.at("pred")),
                                                      central_difference(f, params, step)));
            }
            {
                auto f = eval_geo(2);
                worst_n = std::max(worst_n,
                                   max_relative_error(tensor_to_vec(g.normal.gradients.at("pred")),
                                                      central_difference(f, params, step)));
            }
            const LossValue jl =
                joint_localization_loss(as_points(), gt_joints, lm, mode, cam);
            {
                const auto f = [&]() {
                    return joint_localization_loss(as_points(), gt_joints, lm, mode, cam).value;
                };
                worst_j = std::max(worst_j,
                                   max_relative_error(tensor_to_vec(jl.gradients.at("pred")),
                                                      central_difference(f, params, step)));
            }

            // Weighted aggregation over the shared "pred" input.
            const auto make_components = [&](const Points3& p) {
                const GeometricLosses gg = geometric_losses(p, gt, topo);
                std::map<std::string, LossValue> comps;
                comps["v"] = gg.vertex;
                comps["e"] = gg.edge;
                comps["n"] = gg.normal;
                comps["j"] = joint_localization_loss(p, gt_joints, lm, mode, cam);
                for (const std::string& name : total_loss_components())
                    if (!comps.count(name)) comps[name] = LossValue{};
                return comps;
            };
            const LossValue total = total_loss(make_components(as_points()), weights);
            const auto f_total = [&]() {
                return total_loss(make_components(as_points()), weights).value;
            };
            worst_total = std::max(worst_total,
                                   max_relative_error(tensor_to_vec(total.gradients.at("pred")),
                                                      central_difference(f_total, params, step)));
        }
        record("vertex_loss", worst_v, config.gradcheck.tol_loss);
        record("edge_loss", worst_e, config.gradcheck.tol_loss);
        record("normal_loss", worst_n, config.gradcheck.tol_loss);
        record("joint_loss", worst_j, config.gradcheck.tol_loss);
        record("total_loss", worst_total, config.gradcheck.tol_loss);
    }

    // Silhouette losses wrt the rendered image.
    {
        double worst_mse = 0.0, worst_bnd = 0.0;
        for (int i = 0; i < n_inst; ++i) {
            Rng rng(config.seed * 5000 + i);
            const int h = 10, w = 10;
            Image gt_mask = Image::Zero(h, w);
            for (int y = 2; y < 8; ++y)
                for (int x = 2; x < 8; ++x) gt_mask(y, x) = rng.uniform() < 0.8 ? 1.0 : 0.0;
            const DistanceField df = distance_field(gt_mask);
            SoftSilhouette sil;
            sil.grid = crop_grid(h, w);
            sil.sigma = config.gradcheck.sigma;
            sil.image.resize(h, w);
            std::vector<double> pix(h * w);
            for (double& p : pix) p = rng.uniform(0.0, 1.0);
            const auto rebuild = [&]() {
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) sil.image(y, x) = pix[y * w + x];
            };
            rebuild();
            const SilhouetteLoss sl = silhouette_loss(sil, gt_mask, df);
            const auto eval_mse = [&]() {
                rebuild();
                return silhouette_loss(sil, gt_mask, df).mse.value;
            };
            const auto eval_bnd = [&]() {
                rebuild();
                return silhouette_loss(sil, gt_mask, df).boundary.value;
            };
            worst_mse = std::max(worst_mse,
                                 max_relative_error(tensor_to_vec(sl.mse.gradients.at("silhouette")),
                                                    central_difference(eval_mse, pix, step)));
            worst_bnd = std::max(
                worst_bnd, max_relative_error(tensor_to_vec(sl.boundary.gradients.at("silhouette")),
                                              central_difference(eval_bnd, pix, step)));
        }
        record("silhouette_mse", worst_mse, config.gradcheck.tol_loss);
        record("silhouette_boundary", worst_bnd, config.gradcheck.tol_loss);
    }

    // Full rasterizer chain: silhouette losses through the soft render,
    // gradients wrt 2D vertices and visibilities.
    {
        double worst = 0.0;
        for (int i = 0; i < n_inst; ++i) {
            Rng rng(config.seed * 6000 + i);
            const int h = 12, w = 12;
            const RenderGrid grid = crop_grid(h, w);
            Image gt_mask = Image::Zero(h, w);
            for (int y = 3; y < 9; ++y)
                for (int x = 3; x < 9; ++x) gt_mask(y, x) = 1.0;
            const DistanceField df = distance_field(gt_mask);

            std::vector<double> params(v_count * 2 + v_count);
            for (int v = 0; v < v_count; ++v) {
                params[2 * v] = 1.5 + 4.0 * topo.uv_atlas(v, 0) * 2.0 + rng.uniform(-0.3, 0.3);
                params[2 * v + 1] = 1.5 + 4.0 * topo.uv_atlas(v, 1) * 2.0 + rng.uniform(-0.3, 0.3);
            }
            for (int v = 0; v < v_count; ++v)
                params[2 * v_count + v] = rng.uniform(0.2, 0.9);

            const auto unpack = [&](Points2& verts, VecX& vis) {
                verts.resize(v_count, 2);
                vis.resize(v_count);
                for (int v = 0; v < v_count; ++v) {
                    verts(v, 0) = params[2 * v];
                    verts(v, 1) = params[2 * v + 1];
                    vis(v) = params[2 * v_count + v];
                }
            };
            const auto eval = [&]() {
                Points2 verts;
                VecX vis;
                unpack(verts, vis);
                const SoftSilhouette sil =
                    render_soft_silhouette(verts, vis, topo, grid, config.gradcheck.sigma);
                return silhouette_loss(sil, gt_mask, df).combined;
            };

            Points2 verts;
            VecX vis;
            unpack(verts, vis);
            const SoftSilhouette sil = render_soft_silhouette(verts, vis, topo, grid,
                                                              config.gradcheck.sigma);
            const SilhouetteLoss sl = silhouette_loss(sil, gt_mask, df);
            Image dL_dimg(h, w);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    dL_dimg(y, x) = 100.0 * sl.mse.gradients.at("silhouette").at(y, x) +
                                    sl.boundary.gradients.at("silhouette").at(y, x);
            const RenderGrads rg = render_soft_silhouette_backward(verts, vis, topo, grid,
                                                                   config.gradcheck.sigma, dL_dimg);
            std::vector<double> analytic(params.size());
            for (int v = 0; v < v_count; ++v) {
                analytic[2 * v] = rg.vertices_2d(v, 0);
                analytic[2 * v + 1] = rg.vertices_2d(v, 1);
                analytic[2 * v_count + v] = rg.visibility(v);
            }
            const auto fd = central_difference(eval, params, step);
            worst = std::max(worst, max_relative_error(analytic, fd));
        }
        record("render", worst, config.gradcheck.tol_render);
    }

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

    RunReport report;
    report.body["command"] = "gradcheck";
    report.body["config"] = config_to_json(config);
    json table = json::object();
    bool all_pass = true;
    for (const CheckRow& row : rows) {
        const bool pass = row.max_rel <= row.tolerance;
        all_pass = all_pass && pass;
        table[row.name] = {{"max_rel_err", row.max_rel},
                           {"tolerance", row.tolerance},
                           {"pass", pass}};
    }
    report.body["gradcheck"] = table;
    report.body["wall_clock_s"] = wall;
    report.exit_code = all_pass ? 0 : 1;
    return report;
}

// ---------------------------------------------------------------------------
// Fit: optimize decoder inputs against the total loss on one scene

namespace {

struct FitParams {
    Tensor heatmaps;  // H x W x V scores
    RegressionHead head;
};

struct FitContext {
    Scene scene;
    RenderGrid grid;
    Image padded_mask;
    DistanceField df;
    std::vector<std::pair<int, int>> ann_pixels;  // rounded (x, y)
    LossWeights weights;
    double sigma = 1.0;
    double alpha = 1.0;
};

struct FitEval {
    double total = 0.0;
    std::map<std::string, double> components;
    VertexState state;
    Tensor g_heatmaps;
    RegressionGrads g_head;
};

FitEval evaluate_fit(const FitContext& ctx, const FitParams& params, bool with_grads) {
    const MeshTopology& topo = ctx.scene.topology;
    const int v_count = topo.vertex_count;

    HeatmapStack hs;
    hs.scores = params.heatmaps;
    hs.alpha = ctx.alpha;

    Points2 sp(v_count, 2);
    for (int v = 0; v < v_count; ++v)
        sp.row(v) = argsoftmax2d(hs.channel(v), hs.alpha).transpose();

    const RegressionDecode reg = decode_regression(params.head);

    FitEval out;
    out.state = fuse_predictions(sp, reg.positions, reg.visibility);

    std::map<std::string, LossValue> comps;
    const double n_ann = std::max<std::size_t>(ctx.scene.annotations.size(), 1);

    // Barycentric CE and UV consistency, averaged over annotations; both
    // accumulate into the shared "heatmaps" input.
    LossValue bl, cons;
    bl.gradients["heatmaps"] = Tensor(params.heatmaps.dims);
    cons.gradients["heatmaps"] = Tensor(params.heatmaps.dims);
    for (std::size_t a = 0; a < ctx.scene.annotations.size(); ++a) {
        const SurfaceAnnotation& ann = ctx.scene.annotations[a];
        const auto [px, py] = ctx.ann_pixels[a];
        const LossValue ce =
            barycentric_cross_entropy(hs.scores_at_pixel(px, py), ann, topo);
        bl.value += ce.value / n_ann;
        const Tensor& gce = ce.gradients.at("scores");
        for (int v = 0; v < v_count; ++v)
            bl.gradients["heatmaps"].at(py, px, v) += gce.at(v) / n_ann;

        const LossValue cl = uv_consistency_loss(hs, ann, topo);
        cons.value += cl.value / n_ann;
        const Tensor& gcl = cl.gradients.at("heatmaps");
        Tensor& acc = cons.gradients["heatmaps"];
        for (std::size_t k = 0; k < acc.data.size(); ++k) acc.data[k] += gcl.data[k] / n_ann;
    }
    comps["bl"] = std::move(bl);
    comps["cons"] = std::move(cons);

    comps["vis"] = visibility_bce(reg.visibility, ctx.scene.visibility_labels);

    const GeometricLosses geo =
        geometric_losses(out.state.fused_xyz, ctx.scene.gt_vertices_px, topo);
    comps["v"] = geo.vertex;
    comps["e"] = geo.edge;
    comps["n"] = geo.normal;
    comps["j"] = joint_localization_loss(out.state.fused_xyz, ctx.scene.gt_joints_px,
                                         ctx.scene.landmarker, JointLossMode::ThreeD);

    Points2 fused_xy(v_count, 2);
    for (int v = 0; v < v_count; ++v)
        fused_xy.row(v) << out.state.fused_xyz(v, 0), out.state.fused_xyz(v, 1);
    const SoftSilhouette sil =
        render_soft_silhouette(fused_xy, reg.visibility, topo, ctx.grid, ctx.sigma);
    const SilhouetteLoss sl = silhouette_loss(sil, ctx.padded_mask, ctx.df);
    comps["sil_l2"] = sl.mse;
    comps["sil_bnd"] = sl.boundary;

    const LossValue total = total_loss(comps, ctx.weights);
    out.total = total.value;
    for (const auto& [name, lv] : comps) out.components[name] = lv.value;
    if (!with_grads) return out;

    // Chain: silhouette -> (fused XY, visibility); fused -> (sp, reg, w);
    // sp -> heatmaps; (reg, w) -> head logits.
    const Tensor& g_sil = total.gradients.at("silhouette");
    Image dL_dimg(ctx.grid.height, ctx.grid.width);
    for (int y = 0; y < ctx.grid.height; ++y)
        for (int x = 0; x < ctx.grid.width; ++x) dL_dimg(y, x) = g_sil.at(y, x);
    const RenderGrads rg = render_soft_silhouette_backward(fused_xy, reg.visibility, topo,
                                                           ctx.grid, ctx.sigma, dL_dimg);

    Points3 g_fused = Points3::Zero(v_count, 3);
    const Tensor& g_pred = total.gradients.at("pred");
    for (int v = 0; v < v_count; ++v)
        for (int a = 0; a < 3; ++a) g_fused(v, a) = g_pred.at(v, a);
    for (int v = 0; v < v_count; ++v) {
        g_fused(v, 0) += rg.vertices_2d(v, 0);
        g_fused(v, 1) += rg.vertices_2d(v, 1);
    }

    const FusionGrads fg =
        fuse_predictions_backward(sp, reg.positions, reg.visibility, g_fused);

    VecX g_visibility = fg.visibility + rg.visibility;
    const Tensor& g_vis_bce = total.gradients.at("visibility");
    for (int v = 0; v < v_count; ++v) g_visibility(v) += g_vis_bce.at(v);

    out.g_heatmaps = total.gradients.at("heatmaps");
    for (int v = 0; v < v_count; ++v) {
        const MatX gch = argsoftmax2d_backward(hs.channel(v), hs.alpha,
                                               Vec2(fg.sp_xy(v, 0), fg.sp_xy(v, 1)));
        for (int y = 0; y < hs.height(); ++y)
            for (int x = 0; x < hs.width(); ++x) out.g_heatmaps.at(y, x, v) += gch(y, x);
    }

    out.g_head = decode_regression_backward(params.head, fg.reg_xyz, g_visibility);
    return out;
}

double grad_norm(const FitEval& e) {
    double acc = 0.0;
    for (double g : e.g_heatmaps.data) acc += g * g;
    for (double g : e.g_head.logits_x.data) acc += g * g;
    for (double g : e.g_head.logits_y.data) acc += g * g;
    for (double g : e.g_head.logits_z.data) acc += g * g;
    acc += e.g_head.visibility_logits.squaredNorm();
    return std::sqrt(acc);
}

json metrics_json(const Scene& scene, const Points3& fused, const MetricConfig& mc) {
    const double px_to_mm = scene.unit_to_mm / scene.camera.scale;
    const Points3 pred_joints = landmark_joints(fused, scene.landmarker);
    const PoseMetrics pose = pose_metrics(pred_joints, scene.gt_joints_px, fused,
                                          scene.gt_vertices_px, scene.root_joint(), px_to_mm);

    double mean2d = 0.0;
    for (int v = 0; v < scene.topology.vertex_count; ++v) {
        const double dx = fused(v, 0) - scene.gt_vertices_px(v, 0);
        const double dy = fused(v, 1) - scene.gt_vertices_px(v, 1);
        mean2d += std::sqrt(dx * dx + dy * dy);
    }
    mean2d /= scene.topology.vertex_count;

    Points2 pred_kp(pred_joints.rows(), 2), gt_kp(pred_joints.rows(), 2);
    for (Eigen::Index j = 0; j < pred_joints.rows(); ++j) {
        pred_kp.row(j) << pred_joints(j, 0), pred_joints(j, 1);
        gt_kp.row(j) << scene.gt_joints_px(j, 0), scene.gt_joints_px(j, 1);
    }
    const double area = std::max(scene.gt_mask.sum(), 1.0);
    const ApAr kp = keypoint_ap({pred_kp}, {gt_kp}, {area}, mc.oks_kappa);

    const MatX table = geodesic_table(scene.topology, scene.topology.rest_positions);
    std::vector<CorrespondencePair> pairs;
    for (const SurfaceAnnotation& ann : scene.annotations) {
        CorrespondencePair pair;
        pair.gt = ann;
        pair.predicted = locate_pixel_on_mesh(fused, scene.topology, ann.pixel);
        pairs.push_back(pair);
    }
    ApAr dp{1.0, 1.0};
    if (!pairs.empty())
        dp = densepose_ap({pairs}, scene.topology,
                          [&table](int a, int b) { return table(a, b); }, mc.gps_kappa);

    // Bounding sphere of the GT vertices, pixel units (radius about centroid).
    Vec3 centroid = Vec3::Zero();
    for (int v = 0; v < scene.topology.vertex_count; ++v)
        centroid += Vec3(scene.gt_vertices_px.row(v));
    centroid /= scene.topology.vertex_count;
    double radius = 0.0;
    for (int v = 0; v < scene.topology.vertex_count; ++v)
        radius = std::max(radius, (Vec3(scene.gt_vertices_px.row(v)) - centroid).norm());

    const AlignmentTransform tf = procrustes_align(pred_joints, scene.gt_joints_px);
    double pa_px = 0.0;
    for (Eigen::Index j = 0; j < pred_joints.rows(); ++j)
        pa_px += (tf.apply(Vec3(pred_joints.row(j))) - Vec3(scene.gt_joints_px.row(j))).norm();
    pa_px /= static_cast<double>(pred_joints.rows());

    json m;
    m["mpjpe"] = pose.mpjpe;
    m["pa_mpjpe"] = pose.pa_mpjpe;
    m["pve"] = pose.pve;
    m["kp_ap"] = kp.ap;
    m["kp_ar"] = kp.ar;
    m["dp_ap"] = dp.ap;
    m["dp_ar"] = dp.ar;
    m["n_instances"] = 1;
    m["mean_vertex_2d_px"] = mean2d;
    m["pa_mpjpe_px"] = pa_px;
    m["bounding_sphere_diameter_px"] = 2.0 * radius;
    return m;
}

}  // namespace

RunReport run_fit(const ExperimentConfig& config, const std::string& out_dir) {
    const auto t_start = std::chrono::steady_clock::now();
    namespace fs = std::filesystem;

    FitContext ctx;
    ctx.scene = generate_scene(scene_seed(config, 0), config.scene);
    ctx.grid = padded_grid(config.scene.height, config.scene.width, config.render_pad);
    ctx.padded_mask = pad_mask(ctx.scene.gt_mask, ctx.grid);
    ctx.df = distance_field(ctx.padded_mask);
    ctx.weights = config.weights;
    ctx.sigma = config.sigma;
    ctx.alpha = config.scene.alpha;
    for (const SurfaceAnnotation& ann : ctx.scene.annotations) {
        const int px = std::clamp(static_cast<int>(std::lround(ann.pixel.x())), 0,
                                  config.scene.width - 1);
        const int py = std::clamp(static_cast<int>(std::lround(ann.pixel.y())), 0,
                                  config.scene.height - 1);
        ctx.ann_pixels.emplace_back(px, py);
    }

    const int v_count = ctx.scene.topology.vertex_count;
    FitParams params;
    params.heatmaps = Tensor({static_cast<std::size_t>(config.scene.height),
                              static_cast<std::size_t>(config.scene.width),
                              static_cast<std::size_t>(v_count)});
    params.head = make_regression_head(v_count, 64, config.scene.height, config.scene.width);
    {
        Rng rng(config.seed ^ 0xF17F17ULL);
        for (double& s : params.heatmaps.data) s = 0.01 * rng.normal();
        for (double& s : params.head.logits_x.data) s = 0.01 * rng.normal();
        for (double& s : params.head.logits_y.data) s = 0.01 * rng.normal();
        for (double& s : params.head.logits_z.data) s = 0.01 * rng.normal();
        for (int v = 0; v < v_count; ++v)
            params.head.visibility_logits(v) = 0.01 * rng.normal();
    }

    std::vector<double> trace;
    json components_initial, components_final;
    for (int step = 0; step < config.optim.steps; ++step) {
        FitEval eval = evaluate_fit(ctx, params, true);
        if (!std::isfinite(eval.total)) throw DivergedTraining("total loss non-finite");
        trace.push_back(eval.total);
        if (step == 0)
            for (const auto& [k, v] : eval.components) components_initial[k] = v;

        const double norm = grad_norm(eval);
        const double scale = norm > config.optim.clip_norm && norm > 0.0
                                 ? config.optim.clip_norm / norm
                                 : 1.0;
        const double lr = config.optim.lr * scale;
        for (std::size_t i = 0; i < params.heatmaps.data.size(); ++i)
            params.heatmaps.data[i] -= lr * eval.g_heatmaps.data[i];
        for (std::size_t i = 0; i < params.head.logits_x.data.size(); ++i) {
            params.head.logits_x.data[i] -= lr * eval.g_head.logits_x.data[i];
            params.head.logits_y.data[i] -= lr * eval.g_head.logits_y.data[i];
            params.head.logits_z.data[i] -= lr * eval.g_head.logits_z.data[i];
        }
        params.head.visibility_logits -= lr * eval.g_head.visibility_logits;
    }
    FitEval final_eval = evaluate_fit(ctx, params, false);
    if (!std::isfinite(final_eval.total)) throw DivergedTraining("total loss non-finite");
    trace.push_back(final_eval.total);
    for (const auto& [k, v] : final_eval.components) components_final[k] = v;

    RunReport report;
    report.body["command"] = "fit";
    report.body["config"] = config_to_json(config);
    report.body["loss_trace"] = trace;
    report.body["components_initial"] = components_initial;
    report.body["components_final"] = components_final;
    report.body["metrics"] =
        metrics_json(ctx.scene, final_eval.state.fused_xyz, config.metrics);

    json artifacts = json::object();
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        const std::string pred_path = out_dir + "/scene_0000.mpt";
        write_tensor(pred_path, Tensor::from_points(final_eval.state.fused_xyz));
        artifacts["scene_0000.mpt"] = file_checksum(pred_path);
    }
    report.body["artifacts"] = artifacts;
    report.body["wall_clock_s"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

// ---------------------------------------------------------------------------
// Eval

RunReport run_eval(const ExperimentConfig& config, const std::string& predictions_dir,
                   const std::string& out_dir) {
    const auto t_start = std::chrono::steady_clock::now();
    namespace fs = std::filesystem;
    const int n = config.eval.scene_count;
    const int threads = resolve_threads(config.threads);

    struct Row {
        PoseMetrics pose;
        Points2 pred_kp, gt_kp;
        double area = 0.0;
        std::vector<CorrespondencePair> pairs;
    };
    std::vector<Row> rows(n);

    // The template is shared; geodesics once.
    const TemplateMesh tmpl = make_biped_template();
    const MatX table = geodesic_table(tmpl.topology, tmpl.topology.rest_positions);

    // Check all prediction files up front: missing input is a usage error.
    std::vector<std::string> pred_paths(n);
    for (int i = 0; i < n; ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "scene_%04d.mpt", i);
        pred_paths[i] = predictions_dir + "/" + name;
        if (!fs::exists(pred_paths[i]))
            throw MissingPredictions("missing prediction file: " + pred_paths[i]);
    }

    parallel_for(n, threads, [&](int i) {
        const Scene scene = generate_scene(scene_seed(config, i), config.scene);
        const Points3 fused = read_tensor(pred_paths[i]).to_points3();
        if (fused.rows() != scene.topology.vertex_count)
            throw ShapeMismatch("prediction " + pred_paths[i] + " has wrong vertex count");

        Row& row = rows[i];
        const double px_to_mm = scene.unit_to_mm / scene.camera.scale;
        const Points3 pred_joints = landmark_joints(fused, scene.landmarker);
        row.pose = pose_metrics(pred_joints, scene.gt_joints_px, fused, scene.gt_vertices_px,
                                scene.root_joint(), px_to_mm);
        row.pred_kp.resize(pred_joints.rows(), 2);
        row.gt_kp.resize(pred_joints.rows(), 2);
        for (Eigen::Index j = 0; j < pred_joints.rows(); ++j) {
            row.pred_kp.row(j) << pred_joints(j, 0), pred_joints(j, 1);
            row.gt_kp.row(j) << scene.gt_joints_px(j, 0), scene.gt_joints_px(j, 1);
        }
        row.area = std::max(scene.gt_mask.sum(), 1.0);
        for (const SurfaceAnnotation& ann : scene.annotations) {
            CorrespondencePair pair;
            pair.gt = ann;
            pair.predicted = locate_pixel_on_mesh(fused, scene.topology, ann.pixel);
            row.pairs.push_back(pair);
        }
    });

    double mpjpe = 0.0, pa = 0.0, pve = 0.0;
    std::vector<Points2> pred_sets, gt_sets;
    std::vector<double> areas;
    std::vector<std::vector<CorrespondencePair>> instances;
    for (const Row& row : rows) {
        mpjpe += row.pose.mpjpe / n;
        pa += row.pose.pa_mpjpe / n;
        pve += row.pose.pve / n;
        pred_sets.push_back(row.pred_kp);
        gt_sets.push_back(row.gt_kp);
        areas.push_back(row.area);
        instances.push_back(row.pairs);
    }
    const ApAr kp = keypoint_ap(pred_sets, gt_sets, areas, config.metrics.oks_kappa);
    const ApAr dp = densepose_ap(instances, tmpl.topology,
                                 [&table](int a, int b) { return table(a, b); },
                                 config.metrics.gps_kappa);

    RunReport report;
    report.body["command"] = "eval";
    report.body["config"] = config_to_json(config);
    report.body["metrics"] = {{"mpjpe", mpjpe},   {"pa_mpjpe", pa}, {"pve", pve},
                              {"kp_ap", kp.ap},   {"kp_ar", kp.ar}, {"dp_ap", dp.ap},
                              {"dp_ar", dp.ar},   {"n_instances", n}};
    json artifacts = json::object();
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        RunReport metrics_only;
        metrics_only.body = report.body["metrics"];
        metrics_only.write(out_dir + "/metrics.json");
        artifacts["metrics.json"] = file_checksum(out_dir + "/metrics.json");
    }
    report.body["artifacts"] = artifacts;
    report.body["wall_clock_s"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

// ---------------------------------------------------------------------------
// Synth

RunReport run_synth(const ExperimentConfig& config, const std::string& out_dir) {
    const auto t_start = std::chrono::steady_clock::now();
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    json artifacts = json::object();
    for (int i = 0; i < config.eval.scene_count; ++i) {
        const Scene scene = generate_scene(scene_seed(config, i), config.scene);
        char name[64];
        std::snprintf(name, sizeof(name), "scene_%04d", i);
        const std::string dir = out_dir + "/" + name;
        write_scene(dir, scene);
        for (const char* file :
             {"mesh.txt", "heatmaps.mpt", "vertices_px.mpt", "vertices_3d.mpt", "joints.mpt",
              "joints_px.mpt", "mask.pgm", "scene.json"})
            artifacts[std::string(name) + "/" + file] = file_checksum(dir + "/" + file);
    }

    RunReport report;
    report.body["command"] = "synth";
    report.body["config"] = config_to_json(config);
    report.body["artifacts"] = artifacts;
    report.body["wall_clock_s"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

// ---------------------------------------------------------------------------
// Upsampler training on synthetic deformations

RunReport run_upsampler_train(const ExperimentConfig& config, const std::string& out_dir) {
    const auto t_start = std::chrono::steady_clock::now();
    namespace fs = std::filesystem;

    const TemplateMesh low = make_biped_template();
    const MeshTopology mid_topo = midpoint_subdivide(low.topology);
    const MeshTopology high_topo = midpoint_subdivide(mid_topo);

    // The biped landmarker lifts to the high mesh: original vertices keep
    // their indices through subdivision.
    MatX lm_high_w = MatX::Zero(low.landmarker.joint_count(), high_topo.vertex_count);
    lm_high_w.leftCols(low.topology.vertex_count) = low.landmarker.matrix;
    const Landmarker lm_high = make_landmarker(lm_high_w);
    MatX lm_low_root = low.landmarker.matrix.row(0);

    const DeformationBasis basis =
        make_deformation_basis(config.upsampler.basis_count, config.seed ^ 0xBA515ULL);

    const auto make_samples = [&](int count, std::uint64_t seed) {
        Rng rng(seed);
        std::vector<UpsampleSample> samples;
        for (int i = 0; i < count; ++i) {
            VecX coeff(config.upsampler.basis_count);
            for (int m = 0; m < config.upsampler.basis_count; ++m)
                coeff(m) = rng.normal(0.0, config.upsampler.coeff_std);
            UpsampleSample sample;
            sample.low = basis.apply(low.topology.rest_positions, coeff);
            sample.mid_gt = basis.apply(mid_topo.rest_positions, coeff);
            sample.high_gt = basis.apply(high_topo.rest_positions, coeff);
            // Root-align every stage with the low mesh's root joint.
            const Vec3 root = (lm_low_root * sample.low).row(0).transpose();
            for (Eigen::Index v = 0; v < sample.low.rows(); ++v)
                sample.low.row(v) -= root.transpose();
            for (Eigen::Index v = 0; v < sample.mid_gt.rows(); ++v)
                sample.mid_gt.row(v) -= root.transpose();
            for (Eigen::Index v = 0; v < sample.high_gt.rows(); ++v)
                sample.high_gt.row(v) -= root.transpose();
            sample.gt_joints = landmark_joints(sample.high_gt, lm_high);
            samples.push_back(std::move(sample));
        }
        return samples;
    };

    const auto train_set = make_samples(config.upsampler.train_samples, config.seed * 31 + 1);
    const auto test_set = make_samples(config.upsampler.test_samples, config.seed * 31 + 2);

    UpsamplerTrainConfig tc = config.upsampler.train;
    tc.seed = config.seed * 31 + 3;
    const UpsamplerParams params = train_upsampler(train_set, lm_high, tc);

    const double test_l1 = upsampler_l1(params, test_set, lm_high);

    // Non-learned baseline bound on rest poses; compare on the high stage.
    Points3 low_rest_aligned = low.topology.rest_positions;
    Points3 high_rest_aligned = high_topo.rest_positions;
    {
        const Vec3 root = (lm_low_root * low.topology.rest_positions).row(0).transpose();
        for (Eigen::Index v = 0; v < low_rest_aligned.rows(); ++v)
            low_rest_aligned.row(v) -= root.transpose();
        for (Eigen::Index v = 0; v < high_rest_aligned.rows(); ++v)
            high_rest_aligned.row(v) -= root.transpose();
    }
    const auto bindings = bind_vertices(low.topology, low_rest_aligned, high_rest_aligned);

    const auto high_l1 = [](const Points3& a, const Points3& b) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < a.rows(); ++i)
            for (int k = 0; k < 3; ++k) acc += std::abs(a(i, k) - b(i, k));
        return acc / static_cast<double>(a.size());
    };
    double learned_high = 0.0, baseline_high = 0.0;
    for (const UpsampleSample& sample : test_set) {
        learned_high += high_l1(upsample(sample.low, params).high, sample.high_gt);
        baseline_high +=
            high_l1(nearest_upsample(sample.low, low.topology, bindings), sample.high_gt);
    }
    learned_high /= test_set.size();
    baseline_high /= test_set.size();

    RunReport report;
    report.body["command"] = "upsampler-train";
    report.body["config"] = config_to_json(config);
    report.body["upsampler"] = {{"dims", {params.v_low(), params.v_mid(), params.v_high()}},
                                {"test_l1", test_l1},
                                {"learned_high_l1", learned_high},
                                {"baseline_high_l1", baseline_high}};

    json artifacts = json::object();
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_tensor(out_dir + "/stage1.mpt", Tensor::from_matrix(params.stage1));
        write_tensor(out_dir + "/bias1.mpt", Tensor::from_points(params.bias1));
        write_tensor(out_dir + "/stage2.mpt", Tensor::from_matrix(params.stage2));
        write_tensor(out_dir + "/bias2.mpt", Tensor::from_points(params.bias2));
        json dims;
        dims["v_low"] = params.v_low();
        dims["v_mid"] = params.v_mid();
        dims["v_high"] = params.v_high();
        std::ofstream sidecar(out_dir + "/dims.json");
        sidecar << dims.dump(2) << "\n";
        sidecar.close();
        for (const char* file : {"stage1.mpt", "bias1.mpt", "stage2.mpt", "bias2.mpt",
                                 "dims.json"})
            artifacts[file] = file_checksum(out_dir + "/" + std::string(file));
    }
    report.body["artifacts"] = artifacts;
    report.body["wall_clock_s"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

}  // namespace mpk
