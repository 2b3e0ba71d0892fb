#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>

#include "nbrseg/nbrseg.hpp"

namespace fs = std::filesystem;
using namespace nbrseg;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kNumerical = 2;

std::pair<ModelConfig, TrainConfig> load_configs(const std::string& path) {
    ModelConfig m;
    TrainConfig t;
    if (!path.empty()) apply_config(KeyValueConfig::load(path), m, t);
    return {m, t};
}

int cmd_train(const std::string& config, const std::string& data, const std::string& out, const std::string& resume,
              bool quiet) {
    fs::create_directories(out);
    std::unique_ptr<Trainer<double>> trainer;
    if (resume.empty()) {
        auto [m, t] = load_configs(config);
        trainer = std::make_unique<Trainer<double>>(m, t, load_dataset(data, m.num_classes));
    } else {
        auto ck = read_checkpoint(resume);
        auto [m, t] = ck.configs();
        trainer = std::make_unique<Trainer<double>>(Trainer<double>::resume(ck, load_dataset(data, m.num_classes)));
    }
    std::ofstream cfg_out(fs::path(out) / "config.txt");
    cfg_out << to_config_text(trainer->model().config(), trainer->train_config());

    const fs::path log_path = fs::path(out) / "train_log.tsv";
    const bool append = !resume.empty() && fs::exists(log_path);
    std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
    if (!append) log << "step\tepoch\tlr\tl_class\tl_pair\tl_cent\ttotal\taccuracy\n";
    log << std::setprecision(9);

    const std::size_t total = trainer->total_steps();
    auto summary = run_training(
        *trainer,
        [&](const TrainRecord& r) {
            log << r.step << '\t' << r.epoch << '\t' << r.learning_rate << '\t' << r.loss.l_class << '\t'
                << r.loss.l_pair << '\t' << r.loss.l_cent << '\t' << r.loss.total << '\t' << r.accuracy << '\n';
            if (!quiet && (r.step + 1 == total || (r.step + 1) % 50 == 0))
                std::cout << "step " << r.step + 1 << "/" << total << "  loss " << r.loss.total << "  acc "
                          << r.accuracy << "\n";
        },
        out);
    std::cout << "trained " << trainer->steps_done() << " steps on " << trainer->num_blocks()
              << " blocks; final epoch accuracy " << summary.final_epoch_accuracy << "\n"
              << "checkpoint: " << (fs::path(out) / "last.ckpt").string() << "\n";
    return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, const std::string& report) {
    auto ck = read_checkpoint(checkpoint);
    auto model = model_from_checkpoint<double>(ck);
    auto [m, t] = ck.configs();
    auto scenes = load_dataset(data, m.num_classes);
    auto rep = evaluate(model, scenes, t);
    write_metrics_report(std::cout, rep.confusion, rep.metrics);
    if (!report.empty()) {
        std::ofstream os(report);
        if (!os) throw ValidationError("cannot write report '" + report + "'");
        write_metrics_report(os, rep.confusion, rep.metrics);
    }
    return kOk;
}

int cmd_predict(const std::string& checkpoint, const std::string& data, const std::string& out) {
    auto ck = read_checkpoint(checkpoint);
    auto model = model_from_checkpoint<double>(ck);
    auto [m, t] = ck.configs();
    auto scene = load_point_cloud(data, m.num_classes);
    auto pred = predict_scenes(model, {scene}, t);
    save_point_cloud(out, scene, &pred.front().labels);
    std::cout << "wrote " << scene.size() << " predictions to " << out << "\n";
    return kOk;
}

int cmd_gradcheck(std::uint64_t seed) {
    GradSuiteOptions opt;
    opt.seed = seed;
    bool ok = true;
    std::cout << std::left << std::setw(28) << "check" << std::setw(14) << "max_rel_err" << std::setw(8) << "coords"
              << "result\n";
    for (const auto& e : run_gradient_suite(opt)) {
        ok = ok && e.report.passed;
        std::cout << std::left << std::setw(28) << e.name << std::setw(14) << std::setprecision(3)
                  << e.report.max_rel_error << std::setw(8) << e.report.coordinates
                  << (e.report.passed ? "ok" : "FAIL (" + e.report.worst_param + "[" +
                                                   std::to_string(e.report.worst_index) + "])")
                  << "\n";
    }
    std::cout << (ok ? "all gradient checks passed" : "gradient check failed") << " (tolerance " << opt.tolerance
              << ")\n";
    return ok ? kOk : kNumerical;
}

int cmd_synth(const std::string& spec, const std::string& out) {
    auto cloud = generate_synthetic_scene(load_scene_spec(spec));
    save_point_cloud(out, cloud);
    std::cout << "wrote " << cloud.size() << " points to " << out << "\n";
    return kOk;
}

int cmd_ablate(const std::string& config, const std::string& data, const std::string& out) {
    auto [m, t] = load_configs(config);
    auto scenes = load_dataset(data, m.num_classes);
    auto rows = run_ablation<double>(scenes, m, t, component_ablation(), &std::cerr);
    write_ablation_table(std::cout, rows);
    if (!out.empty()) {
        std::ofstream os(out);
        write_ablation_table(os, rows);
    }
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Point cloud semantic segmentation with learned neighbourhood features"};
    app.require_subcommand(1);

    std::string config, data, out, checkpoint, resume, spec, report;
    bool quiet = false;
    std::uint64_t seed = GradSuiteOptions{}.seed;

    auto* train = app.add_subcommand("train", "Train a model and write checkpoints");
    train->add_option("--config", config, "key = value configuration file");
    train->add_option("--data", data, "directory of scene files (or a single file)")->required();
    train->add_option("--out", out, "output directory")->required();
    train->add_option("--resume", resume, "continue from this checkpoint (its configuration is used)");
    train->add_flag("--quiet", quiet, "no progress output");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on labelled scenes");
    eval->add_option("--checkpoint", checkpoint)->required();
    eval->add_option("--data", data)->required();
    eval->add_option("--report", report, "also write the report to this file");

    auto* predict = app.add_subcommand("predict", "Label every point of one scene");
    predict->add_option("--checkpoint", checkpoint)->required();
    predict->add_option("--data", data)->required();
    predict->add_option("--out", out)->required();

    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operation");
    grad->add_option("--seed", seed);

    auto* synth = app.add_subcommand("synth", "Generate a labelled synthetic scene");
    synth->add_option("--spec", spec)->required();
    synth->add_option("--out", out)->required();

    auto* ablate = app.add_subcommand("ablate", "Train and evaluate every component setting");
    ablate->add_option("--config", config);
    ablate->add_option("--data", data)->required();
    ablate->add_option("--out", out, "also write the table to this file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kValidation;
    }

    try {
        if (*train) return cmd_train(config, data, out, resume, quiet);
        if (*eval) return cmd_eval(checkpoint, data, report);
        if (*predict) return cmd_predict(checkpoint, data, out);
        if (*grad) return cmd_gradcheck(seed);
        if (*synth) return cmd_synth(spec, out);
        if (*ablate) return cmd_ablate(config, data, out);
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    }
    return kValidation;
}
