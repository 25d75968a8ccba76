#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "mpk/errors.hpp"
#include "mpk/harness.hpp"

namespace {

using mpk::ExperimentConfig;
using mpk::RunReport;

struct GlobalOpts {
    std::string config_path;
    std::string out_dir;
    std::string preds_dir;
    long long seed = -1;
    int threads = -1;
    std::string log_format;
};

ExperimentConfig resolve_config(const GlobalOpts& opts) {
    ExperimentConfig config =
        opts.config_path.empty() ? mpk::default_config() : mpk::load_config(opts.config_path);
    if (opts.seed >= 0) config.seed = static_cast<std::uint64_t>(opts.seed);
    if (opts.threads >= 0) config.threads = opts.threads;
    if (!opts.log_format.empty()) config.log_format = opts.log_format;
    return config;
}

void emit(const RunReport& report, const ExperimentConfig& config, const std::string& out_dir) {
    if (!out_dir.empty()) report.write(out_dir + "/report.json");
    if (config.log_format == "json") {
        std::cout << report.dump();
        return;
    }
    // Text mode: compact summary.
    const auto& body = report.body;
    std::cout << body.at("command").get<std::string>() << ": "
              << (report.exit_code == 0 ? "ok" : "FAILED") << "\n";
    if (body.contains("gradcheck")) {
        std::printf("%-22s %14s %11s  %s\n", "loss", "max_rel_err", "tolerance", "status");
        for (const auto& [name, row] : body.at("gradcheck").items())
            std::printf("%-22s %14.3e %11.1e  %s\n", name.c_str(),
                        row.at("max_rel_err").get<double>(), row.at("tolerance").get<double>(),
                        row.at("pass").get<bool>() ? "pass" : "FAIL");
    }
    if (body.contains("loss_trace")) {
        const auto& trace = body.at("loss_trace");
        std::printf("loss: initial %.6g -> final %.6g (%zu steps)\n",
                    trace.front().get<double>(), trace.back().get<double>(), trace.size() - 1);
    }
    if (body.contains("metrics")) std::cout << "metrics: " << body.at("metrics").dump() << "\n";
    if (body.contains("upsampler")) std::cout << "upsampler: " << body.at("upsampler").dump() << "\n";
    if (body.contains("artifacts") && !body.at("artifacts").empty())
        std::cout << body.at("artifacts").size() << " artifact(s) written\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mpk: vertex-heatmap mesh decoding, losses, rendering and evaluation"};
    app.require_subcommand(1);

    GlobalOpts opts;
    app.add_option("--seed", opts.seed, "override the config seed");
    app.add_option("--threads", opts.threads, "worker threads (MPK_THREADS wins)");
    app.add_option("--log", opts.log_format, "log format: json|text")
        ->check(CLI::IsMember({"json", "text"}));

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    gradcheck->add_option("-c,--config", opts.config_path, "config JSON");
    gradcheck->add_option("-o,--out", opts.out_dir, "output directory");

    CLI::App* fit = app.add_subcommand("fit", "optimize decoder inputs on one synthetic scene");
    fit->add_option("-c,--config", opts.config_path, "config JSON");
    fit->add_option("-o,--out", opts.out_dir, "output directory")->required();

    CLI::App* eval = app.add_subcommand("eval", "evaluate predictions against synthetic GT");
    eval->add_option("-c,--config", opts.config_path, "config JSON");
    eval->add_option("-p,--predictions", opts.preds_dir, "predictions directory")->required();
    eval->add_option("-o,--out", opts.out_dir, "output directory")->required();

    CLI::App* synth = app.add_subcommand("synth", "generate synthetic scenes");
    synth->add_option("-c,--config", opts.config_path, "config JSON");
    synth->add_option("-o,--out", opts.out_dir, "output directory")->required();

    CLI::App* upsampler =
        app.add_subcommand("upsampler-train", "train the two-stage mesh upsampler");
    upsampler->add_option("-c,--config", opts.config_path, "config JSON");
    upsampler->add_option("-o,--out", opts.out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const ExperimentConfig config = resolve_config(opts);
        RunReport report;
        if (gradcheck->parsed()) {
            if (!opts.out_dir.empty()) std::filesystem::create_directories(opts.out_dir);
            report = mpk::run_gradcheck(config);
        } else if (fit->parsed()) {
            report = mpk::run_fit(config, opts.out_dir);
        } else if (eval->parsed()) {
            report = mpk::run_eval(config, opts.preds_dir, opts.out_dir);
        } else if (synth->parsed()) {
            report = mpk::run_synth(config, opts.out_dir);
        } else if (upsampler->parsed()) {
            report = mpk::run_upsampler_train(config, opts.out_dir);
        }
        emit(report, config, opts.out_dir);
        return report.exit_code;
    } catch (const mpk::InvalidConfig& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const mpk::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const mpk::MissingPredictions& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const mpk::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
