#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "deshadow/config.hpp"
#include "deshadow/data.hpp"
#include "deshadow/engine.hpp"
#include "deshadow/errors.hpp"
#include "deshadow/features.hpp"
#include "deshadow/image.hpp"
#include "deshadow/metrics.hpp"

#ifndef DESHADOW_VERSION
#define DESHADOW_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace deshadow;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::string timestamp(const char* format) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    localtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, format);
    return os.str();
}

std::string iso_now() { return timestamp("%Y-%m-%dT%H:%M:%S"); }

std::map<std::string, std::string> read_manifest_config(const fs::path& manifest) {
    std::ifstream in(manifest);
    if (!in)
        throw DataError("cannot read " + manifest.string());
    std::string line, config_text;
    bool in_config = false;
    while (std::getline(in, line)) {
        if (line == "[config]") {
            in_config = true;
            continue;
        }
        if (in_config)
            config_text += line + "\n";
    }
    return engine::parse_config_text(config_text);
}

std::vector<fs::path> image_files(const fs::path& dir) {
    if (!fs::is_directory(dir))
        throw DataError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_image_file(e.path()))
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    return files;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config_path;
    std::map<std::string, std::string> overrides;
    std::string run_dir;
    std::string runs_root = "runs";
    std::string resume;
};

void write_manifest(const fs::path& run_dir, const engine::TrainConfig& config, const engine::Networks& nets,
                    const std::string& started) {
    std::ofstream out(run_dir / "manifest.txt");
    out << "version: " << DESHADOW_VERSION << "\n"
        << "seed: " << config.seed << "\n"
        << "regime: " << engine::to_string(config.regime) << "\n"
        << "dataset_root: " << config.dataset_root << "\n"
        << "layout: " << config.layout << "\n"
        << "started: " << started << "\n"
        << "spec_hash: " << nets.spec_hash() << "\n"
        << "generator_f: " << nets.remover->spec().describe() << "\n"
        << "generator_s: " << nets.inserter->spec().describe() << "\n"
        << "discriminator: " << nets.critic_f->spec().describe() << "\n"
        << "[config]\n"
        << engine::config_to_text(config);
}

void write_status(const fs::path& run_dir, const std::string& started, const std::string& state, int64_t steps,
                  const std::string& last_checkpoint) {
    std::ofstream out(run_dir / "status.txt");
    out << "state: " << state << "\n"
        << "started: " << started << "\n"
        << "ended: " << iso_now() << "\n"
        << "steps: " << steps << "\n"
        << "last_checkpoint: " << last_checkpoint << "\n";
}

int cmd_train(const TrainArgs& args) {
    std::map<std::string, std::string> values;
    if (!args.config_path.empty())
        values = engine::read_config_file(args.config_path);
    for (const auto& [k, v] : args.overrides)
        values[k] = v;
    const auto config = engine::build_config(values);
    if (config.dataset_root.empty())
        throw ConfigError("dataset_root is not set");

    const fs::path run_dir = !args.run_dir.empty()
                                 ? fs::path(args.run_dir)
                                 : fs::path(args.runs_root) / (timestamp("%Y%m%d-%H%M%S") + "_" + config.tag);
    fs::create_directories(run_dir);

    data::LoadOptions load;
    load.resolution = config.resolution;
    load.mask_dilation = config.mask_dilation;
    auto dataset = data::load_dataset(config.dataset_root, data::parse_layout(config.layout),
                                      data::parse_split(config.split), load);
    auto fx = features::make_extractor(config.feature_extractor, config.fx_width_divisor, config.seed,
                                       config.fx_weights);
    engine::Trainer trainer(config, std::move(dataset), fx);

    const auto started = iso_now();
    const bool resuming = !args.resume.empty();
    if (resuming)
        trainer.load_checkpoint(args.resume);
    if (!fs::exists(run_dir / "manifest.txt"))
        write_manifest(run_dir, config, trainer.networks(), started);
    std::cout << "run directory: " << run_dir.string() << "\n"
              << "feature extractor: " << fx->name() << (fx->calibrated() ? "" : " (uncalibrated)") << "\n";

    engine::TrainLog log(run_dir / "train_log.csv", resuming);
    std::string last_checkpoint;
    try {
        while (!trainer.finished()) {
            const auto report = trainer.step();
            if (report.step % config.log_every == 0 || trainer.finished())
                log.write(report);
            const bool epoch_end = trainer.steps_done() % trainer.steps_per_epoch() == 0;
            if (epoch_end) {
                std::cout << "epoch " << trainer.epoch() << " step " << report.step << " lr " << report.lr
                          << " generator " << report.generator_total << " critic_f " << report.critic_f
                          << " critic_s " << report.critic_s << std::endl;
                if (trainer.epoch() % config.checkpoint_every == 0 || trainer.finished()) {
                    last_checkpoint = "ckpt_" + std::to_string(trainer.epoch()) + ".bin";
                    trainer.save_checkpoint(run_dir / last_checkpoint);
                }
            } else if (trainer.finished()) {
                last_checkpoint = "ckpt_step" + std::to_string(trainer.steps_done()) + ".bin";
                trainer.save_checkpoint(run_dir / last_checkpoint);
            }
        }
    } catch (const std::exception& e) {
        write_status(run_dir, started, std::string("failed: ") + e.what(), trainer.steps_done(), last_checkpoint);
        throw;
    }
    write_status(run_dir, started, "completed", trainer.steps_done(), last_checkpoint);
    std::cout << "checkpoint: " << (run_dir / last_checkpoint).string() << std::endl;
    return 0;
}

// ---------------------------------------------------------------------------
// eval / infer
// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string dataset_root;
    std::string layout = "istd";
    std::string split = "test";
    std::string regions = "all,shadow,shadow_free";
    std::string out_dir;
    std::string calibration;
    std::string rgb_scale = "byte";
    double lab_peak = 100.0;
    double psnr_cap = 100.0;
    int resolution = 0;
    bool no_heatmaps = false;
    bool no_perceptual = false;
};

metrics::Remover eval_remover(engine::Networks& nets) {
    nets.train(false);
    auto remover = nets.remover;
    return [remover](const torch::Tensor& x) mutable { return remover->forward(x); };
}

int cmd_eval(const EvalArgs& args) {
    engine::TrainConfig config;
    auto nets = engine::load_networks(args.checkpoint, &config);
    const fs::path out_dir = !args.out_dir.empty() ? fs::path(args.out_dir) : fs::path(args.checkpoint).parent_path();

    data::LoadOptions load;
    load.resolution = args.resolution > 0 ? args.resolution : config.resolution;
    auto dataset = data::load_dataset(args.dataset_root, data::parse_layout(args.layout), data::parse_split(args.split),
                                      load);

    metrics::MetricOptions options;
    options.regions = metrics::parse_regions(args.regions);
    if (args.rgb_scale != "byte" && args.rgb_scale != "unit")
        throw ConfigError("--rgb-scale must be byte or unit");
    options.rgb_byte_scale = args.rgb_scale == "byte";
    options.lab_peak = args.lab_peak;
    options.psnr_cap = args.psnr_cap;
    if (!args.no_heatmaps)
        options.heatmap_dir = out_dir / "heatmaps";

    std::unique_ptr<metrics::PerceptualScorer> scorer;
    if (!args.no_perceptual) {
        auto fx = features::make_extractor(config.feature_extractor, config.fx_width_divisor, config.seed,
                                           config.fx_weights);
        std::optional<fs::path> calibration;
        if (!args.calibration.empty())
            calibration = args.calibration;
        scorer = std::make_unique<metrics::PerceptualScorer>(fx, calibration);
    }

    const auto report = metrics::evaluate_dataset(eval_remover(nets), dataset, options, scorer.get());
    report.write(out_dir);
    std::cout << "scorer: " << report.scorer << "\n";
    for (const auto& a : report.aggregates)
        std::cout << std::left << std::setw(12) << metrics::to_string(a.region) << std::setw(20) << a.metric
                  << " mean " << a.mean << " stddev " << a.stddev << "\n";
    std::cout << "report: " << (out_dir / "eval_report.json").string() << std::endl;
    return 0;
}

int cmd_infer(const std::string& checkpoint, const std::string& input_dir, const std::string& output_dir,
              int resolution) {
    auto nets = engine::load_networks(checkpoint);
    auto remove = eval_remover(nets);
    fs::create_directories(output_dir);
    const auto multiple = nets.remover->spec().required_multiple();
    int failures = 0, written = 0;
    torch::NoGradGuard no_grad;
    for (const auto& file : image_files(input_dir)) {
        try {
            std::optional<int> resize;
            if (resolution > 0)
                resize = resolution;
            const auto image = read_image(file, resize);
            if (image.height() % multiple != 0 || image.width() % multiple != 0)
                throw InvalidInput(file.filename().string() + ": " + std::to_string(image.height()) + "x" +
                                   std::to_string(image.width()) + " is not a multiple of " +
                                   std::to_string(multiple));
            auto out = remove(image.to(ValueSpace::model).pixels.unsqueeze(0))[0];
            write_image(fs::path(output_dir) / (file.stem().string() + ".png"), {out, ValueSpace::model});
            ++written;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            ++failures;
        }
    }
    std::cout << "wrote " << written << " images to " << output_dir << "\n";
    return failures == 0 ? 0 : kExitData;
}

// ---------------------------------------------------------------------------
// mask / fixture
// ---------------------------------------------------------------------------

int cmd_mask(const std::string& shadow_dir, const std::string& free_dir, const std::string& out_dir,
             const std::string& method_name, int dilation) {
    const auto method = data::parse_threshold_method(method_name);
    std::map<std::string, fs::path> free_by_stem;
    for (const auto& f : image_files(free_dir))
        free_by_stem[f.stem().string()] = f;
    std::vector<std::pair<fs::path, fs::path>> matched;
    for (const auto& s : image_files(shadow_dir)) {
        auto it = free_by_stem.find(s.stem().string());
        if (it == free_by_stem.end()) {
            std::cerr << "warning: no shadow-free match for " << s.filename().string() << ", skipped\n";
            continue;
        }
        matched.emplace_back(s, it->second);
    }
    if (matched.empty())
        throw ConfigError("no matching file stems between " + shadow_dir + " and " + free_dir);
    fs::create_directories(out_dir);
    for (const auto& [s, f] : matched) {
        const auto mask = data::binarize_difference(read_image(f), read_image(s), method, dilation);
        write_mask(fs::path(out_dir) / (s.stem().string() + ".png"), mask);
    }
    std::cout << "wrote " << matched.size() << " masks to " << out_dir << "\n";
    return 0;
}

int cmd_fixture(int count, int size, const std::string& out_dir, uint64_t seed, const std::string& splits) {
    const auto samples = data::make_synthetic_fixture(count, size, seed);
    std::stringstream ss(splits);
    std::string split;
    while (std::getline(ss, split, ','))
        if (!split.empty())
            data::write_istd(out_dir, samples, data::parse_split(split));
    std::cout << "wrote " << count << " fixture samples (" << size << "x" << size << ") to " << out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct LogTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    std::vector<double> column(size_t i) const {
        std::vector<double> out;
        for (const auto& r : rows)
            out.push_back(r.at(i));
        return out;
    }
};

LogTable read_log(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("training log not found: " + path.string());
    LogTable t;
    std::string line;
    if (!std::getline(in, line))
        throw DataError("training log is empty: " + path.string());
    std::stringstream header(line);
    std::string col;
    while (std::getline(header, col, ','))
        t.columns.push_back(col);
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        std::stringstream ls(line);
        std::vector<double> row;
        while (std::getline(ls, col, ','))
            row.push_back(std::stod(col));
        if (row.size() != t.columns.size())
            throw DataError("malformed row in " + path.string());
        t.rows.push_back(std::move(row));
    }
    return t;
}

void plot_curve(const fs::path& path, const std::string& title, const std::vector<double>& x,
                const std::vector<double>& y) {
    const int width = 640, height = 400, left = 70, right = 20, top = 40, bottom = 40;
    cv::Mat canvas(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
    const double x0 = x.front(), x1 = std::max(x.back(), x0 + 1.0);
    double y0 = *std::min_element(y.begin(), y.end()), y1 = *std::max_element(y.begin(), y.end());
    if (y1 - y0 < 1e-12) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    auto px = [&](double v) { return left + static_cast<int>((v - x0) / (x1 - x0) * (width - left - right)); };
    auto py = [&](double v) { return height - bottom - static_cast<int>((v - y0) / (y1 - y0) * (height - top - bottom)); };
    cv::rectangle(canvas, {left, top}, {width - right, height - bottom}, cv::Scalar(0, 0, 0), 1);
    std::vector<cv::Point> points;
    for (size_t i = 0; i < x.size(); ++i)
        points.emplace_back(px(x[i]), py(y[i]));
    cv::polylines(canvas, points, false, cv::Scalar(180, 80, 20), 1, cv::LINE_AA);
    auto label = [](double v) {
        std::ostringstream os;
        os << std::setprecision(4) << v;
        return os.str();
    };
    const auto font = cv::FONT_HERSHEY_SIMPLEX;
    cv::putText(canvas, title, {left, 25}, font, 0.6, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    cv::putText(canvas, label(y1), {5, top + 5}, font, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    cv::putText(canvas, label(y0), {5, height - bottom}, font, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    cv::putText(canvas, "step " + label(x0), {left, height - 15}, font, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    cv::putText(canvas, label(x1), {width - right - 50, height - 15}, font, 0.4, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
    if (!cv::imwrite(path.string(), canvas))
        throw DataError("cannot write " + path.string());
}

int cmd_report(const std::string& run_dir_arg) {
    const fs::path run_dir(run_dir_arg);
    const auto log = read_log(run_dir / "train_log.csv");
    if (log.rows.empty())
        throw DataError("training log has no rows: " + (run_dir / "train_log.csv").string());

    const std::set<std::string> not_losses{"step", "epoch", "lr", "replay_f_size", "replay_s_size", "mask_bank_size"};
    const auto step_col = std::find(log.columns.begin(), log.columns.end(), "step") - log.columns.begin();
    const auto steps = log.column(step_col);
    const auto plots = run_dir / "plots";
    fs::create_directories(plots);

    std::ostringstream summary;
    summary << "run: " << run_dir.string() << "\nsteps logged: " << log.rows.size() << "\n";
    if (fs::exists(run_dir / "manifest.txt")) {
        const auto config = read_manifest_config(run_dir / "manifest.txt");
        summary << "loss weights:";
        for (const char* key : {"gamma1", "gamma2", "gamma3", "gamma4", "gamma5", "beta1", "beta2", "alpha1",
                                "alpha2", "alpha3"})
            if (auto it = config.find(key); it != config.end())
                summary << " " << key << "=" << it->second;
        summary << "\n";
        if (auto it = config.find("regime"); it != config.end())
            summary << "regime: " << it->second << "\n";
    }
    summary << std::left << std::setw(24) << "component" << std::setw(14) << "first" << std::setw(14) << "last"
            << "min\n";
    size_t plotted = 0;
    for (size_t i = 0; i < log.columns.size(); ++i) {
        if (not_losses.count(log.columns[i]))
            continue;
        const auto values = log.column(i);
        plot_curve(plots / (log.columns[i] + ".png"), log.columns[i], steps, values);
        ++plotted;
        summary << std::setw(24) << log.columns[i] << std::setw(14) << values.front() << std::setw(14)
                << values.back() << *std::min_element(values.begin(), values.end()) << "\n";
    }
    summary << "plots: " << plotted << " in " << plots.string() << "\n";
    std::ofstream(run_dir / "report.txt") << summary.str();
    std::cout << summary.str();
    return 0;
}

int dispatch(int argc, char** argv) {
    CLI::App app{"Shadow removal toolkit: cycle-consistent training, evaluation and inference."};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(DESHADOW_VERSION));

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "Train the generators and discriminators.");
    train->add_option("--config", train_args.config_path, "key = value config file")->check(CLI::ExistingFile);
    train->add_option("--run-dir", train_args.run_dir, "Output directory (default runs/<timestamp>_<tag>)");
    train->add_option("--runs-root", train_args.runs_root, "Parent of generated run directories")
        ->capture_default_str();
    train->add_option("--resume", train_args.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
    for (const auto& key : engine::config_keys()) {
        train->add_option_function<std::string>(
            "--" + key.name, [&train_args, name = key.name](const std::string& v) { train_args.overrides[name] = v; },
            key.help);
    }

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "Score a checkpoint on a paired dataset.");
    eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    eval->add_option("--dataset-root", eval_args.dataset_root, "Dataset root")->required();
    eval->add_option("--layout", eval_args.layout, "istd, usr or flat")->capture_default_str();
    eval->add_option("--split", eval_args.split, "train or test")->capture_default_str();
    eval->add_option("--regions", eval_args.regions, "Comma list of all, shadow, shadow_free")->capture_default_str();
    eval->add_option("--out-dir", eval_args.out_dir, "Report directory (default: the checkpoint's directory)");
    eval->add_option("--calibration", eval_args.calibration, "Per-channel weights for the perceptual scorer");
    eval->add_option("--rgb-scale", eval_args.rgb_scale, "byte (rounded 0-255) or unit")->capture_default_str();
    eval->add_option("--lab-peak", eval_args.lab_peak, "Peak value for Lab PSNR")->capture_default_str();
    eval->add_option("--psnr-cap", eval_args.psnr_cap, "PSNR reported for identical images")->capture_default_str();
    eval->add_option("--resolution", eval_args.resolution, "Resize inputs (default: the training resolution)");
    eval->add_flag("--no-heatmaps", eval_args.no_heatmaps, "Skip error heatmaps");
    eval->add_flag("--no-perceptual", eval_args.no_perceptual, "Skip the perceptual distance");

    std::string infer_ckpt, infer_in, infer_out;
    int infer_resolution = 0;
    auto* infer = app.add_subcommand("infer", "Remove shadows from every image in a directory.");
    infer->add_option("--checkpoint", infer_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
    infer->add_option("--input", infer_in, "Input image directory")->required();
    infer->add_option("--output", infer_out, "Output directory")->required();
    infer->add_option("--resolution", infer_resolution, "Resize inputs to a square of this size");

    std::string mask_shadow, mask_free, mask_out, mask_method = "median";
    int mask_dilation = 0;
    auto* mask = app.add_subcommand("mask", "Binarize shadow / shadow-free differences into masks.");
    mask->add_option("--shadow-dir", mask_shadow, "Shadow images")->required();
    mask->add_option("--shadow-free-dir", mask_free, "Shadow-free images")->required();
    mask->add_option("--out-dir", mask_out, "Mask output directory")->required();
    mask->add_option("--method", mask_method, "median or otsu")->capture_default_str();
    mask->add_option("--dilation", mask_dilation, "Square dilation radius")->capture_default_str();

    int fixture_count = 8, fixture_size = 64;
    uint64_t fixture_seed = 0;
    std::string fixture_out, fixture_splits = "train,test";
    auto* fixture = app.add_subcommand("fixture", "Write a synthetic paired dataset in istd layout.");
    fixture->add_option("--count", fixture_count, "Number of images")->capture_default_str();
    fixture->add_option("--size", fixture_size, "Image side length")->capture_default_str();
    fixture->add_option("--out-dir", fixture_out, "Dataset root")->required();
    fixture->add_option("--seed", fixture_seed, "Random seed")->capture_default_str();
    fixture->add_option("--splits", fixture_splits, "Splits to write (same images in each)")->capture_default_str();

    std::string report_dir;
    auto* report = app.add_subcommand("report", "Summarize a run and plot its loss curves.");
    report->add_option("--run-dir", report_dir, "Run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    if (train->parsed())
        return cmd_train(train_args);
    if (eval->parsed())
        return cmd_eval(eval_args);
    if (infer->parsed())
        return cmd_infer(infer_ckpt, infer_in, infer_out, infer_resolution);
    if (mask->parsed())
        return cmd_mask(mask_shadow, mask_free, mask_out, mask_method, mask_dilation);
    if (fixture->parsed())
        return cmd_fixture(fixture_count, fixture_size, fixture_out, fixture_seed, fixture_splits);
    return cmd_report(report_dir);
}

} // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const InvalidInput& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kExitUsage;
    } catch (const NumericFailure& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
}
