#include "deshadow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

#include "deshadow/errors.hpp"

namespace fs = std::filesystem;

namespace deshadow::metrics {

// ---------------------------------------------------------------------------
// Color space
// ---------------------------------------------------------------------------

namespace {

constexpr double kDelta = 6.0 / 29.0;

torch::Tensor srgb_matrix() {
    return torch::tensor({0.4124564, 0.3575761, 0.1804375, 0.2126729, 0.7151522, 0.0721750, 0.0193339, 0.1191920,
                          0.9503041},
                         torch::kFloat64)
        .view({3, 3});
}

// Applies a 3x3 matrix over the leading channel axis of [3, ...].
torch::Tensor apply_matrix(const torch::Tensor& m, const torch::Tensor& chw) {
    auto flat = chw.reshape({3, -1});
    return torch::matmul(m, flat).reshape(chw.sizes());
}

torch::Tensor white_point() { return srgb_matrix().sum(1).view({3, 1}); }

torch::Tensor lab_f(const torch::Tensor& t) {
    return torch::where(t > std::pow(kDelta, 3), t.clamp_min(0).pow(1.0 / 3.0),
                        t / (3.0 * kDelta * kDelta) + 4.0 / 29.0);
}

torch::Tensor lab_f_inverse(const torch::Tensor& f) {
    return torch::where(f > kDelta, f.pow(3), 3.0 * kDelta * kDelta * (f - 4.0 / 29.0));
}

void require_channels_first(const torch::Tensor& t, const char* what) {
    if (t.dim() < 1 || t.size(0) != 3)
        throw InvalidInput(std::string(what) + ": expected a [3, ...] tensor");
}

} // namespace

torch::Tensor rgb_to_lab(const torch::Tensor& rgb) {
    require_channels_first(rgb, "rgb_to_lab");
    auto c = rgb.to(torch::kFloat64);
    if (c.numel() > 0 && (c.min().item<double>() < -1e-9 || c.max().item<double>() > 1.0 + 1e-9))
        throw InvalidInput("rgb_to_lab: values must lie in [0, 1]");
    c = c.clamp(0.0, 1.0);
    auto linear = torch::where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055).pow(2.4));
    auto xyz = apply_matrix(srgb_matrix(), linear);
    auto normalized = xyz.reshape({3, -1}) / white_point();
    auto f = lab_f(normalized);
    auto L = 116.0 * f[1] - 16.0;
    auto a = 500.0 * (f[0] - f[1]);
    auto b = 200.0 * (f[1] - f[2]);
    return torch::stack({L, a, b}).reshape(rgb.sizes());
}

torch::Tensor lab_to_rgb(const torch::Tensor& lab) {
    require_channels_first(lab, "lab_to_rgb");
    auto flat = lab.to(torch::kFloat64).reshape({3, -1});
    auto fy = (flat[0] + 16.0) / 116.0;
    auto fx = fy + flat[1] / 500.0;
    auto fz = fy - flat[2] / 200.0;
    auto xyz = lab_f_inverse(torch::stack({fx, fy, fz})) * white_point();
    auto linear = torch::matmul(torch::linalg_inv(srgb_matrix()), xyz);
    auto srgb = torch::where(linear <= 0.0031308, 12.92 * linear,
                             1.055 * linear.clamp_min(0).pow(1.0 / 2.4) - 0.055);
    return srgb.reshape(lab.sizes());
}

// ---------------------------------------------------------------------------
// Regions and pixel metrics
// ---------------------------------------------------------------------------

std::string to_string(Region region) {
    switch (region) {
    case Region::all: return "all";
    case Region::shadow: return "shadow";
    case Region::shadow_free: return "shadow_free";
    }
    return "unknown";
}

Region parse_region(const std::string& name) {
    if (name == "all")
        return Region::all;
    if (name == "shadow")
        return Region::shadow;
    if (name == "shadow_free")
        return Region::shadow_free;
    throw ConfigError("unknown region '" + name + "' (expected all, shadow or shadow_free)");
}

std::vector<Region> parse_regions(const std::string& comma_list) {
    std::vector<Region> out;
    std::stringstream ss(comma_list);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty())
            out.push_back(parse_region(item));
    if (out.empty())
        throw ConfigError("no regions given");
    return out;
}

torch::Tensor region_selection(const torch::Tensor& mask, Region region) {
    auto m = mask.dim() == 3 ? mask[0] : mask;
    switch (region) {
    case Region::all: return torch::ones_like(m, torch::kBool);
    case Region::shadow: return m > 0.5;
    case Region::shadow_free: return m <= 0.5;
    }
    throw InvalidInput("unknown region");
}

double rmse(const torch::Tensor& pred, const torch::Tensor& ref, const std::optional<torch::Tensor>& selection) {
    if (pred.sizes() != ref.sizes())
        throw InvalidInput("rmse: shape mismatch");
    auto sq = (pred.to(torch::kFloat64) - ref.to(torch::kFloat64)).pow(2);
    if (!selection)
        return std::sqrt(sq.mean().item<double>());
    auto sel = selection->dim() == 3 ? (*selection)[0] : *selection;
    if (sel.sizes() != sq.sizes().slice(1))
        throw InvalidInput("rmse: selection must be [H, W] matching the images");
    sel = sel.to(torch::kBool);
    const auto count = sel.sum().item<int64_t>();
    if (count == 0)
        throw UndefinedRegion("rmse: the selected region is empty");
    const double total = sq.masked_select(sel.unsqueeze(0).expand_as(sq)).sum().item<double>();
    return std::sqrt(total / static_cast<double>(count * sq.size(0)));
}

double psnr_from_rmse(double value, double max_value, double cap) {
    if (value <= 0.0)
        return cap;
    return std::min(cap, 20.0 * std::log10(max_value / value));
}

double psnr(const torch::Tensor& pred, const torch::Tensor& ref, double max_value,
            const std::optional<torch::Tensor>& selection, double cap) {
    return psnr_from_rmse(rmse(pred, ref, selection), max_value, cap);
}

// ---------------------------------------------------------------------------
// Perceptual distance
// ---------------------------------------------------------------------------

PerceptualScorer::PerceptualScorer(std::shared_ptr<features::FeatureExtractor> extractor,
                                   const std::optional<fs::path>& calibration)
    : extractor_(std::move(extractor)) {
    if (!extractor_)
        throw ConfigError("perceptual scorer needs a feature extractor");
    const auto names = extractor_->tap_names();
    weights_.resize(names.size());
    if (!calibration)
        return;
    std::ifstream in(*calibration);
    if (!in)
        throw ConfigError("calibration file not found: " + calibration->string());
    std::string line;
    size_t tap = 0;
    while (std::getline(in, line)) {
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.resize(hash);
        std::istringstream ls(line);
        std::string name;
        if (!(ls >> name))
            continue;
        if (tap >= names.size() || name != names[tap])
            throw ConfigError("calibration file " + calibration->string() + ": expected tap '" +
                              (tap < names.size() ? names[tap] : std::string("<end>")) + "', got '" + name + "'");
        std::vector<double> w;
        double x;
        while (ls >> x)
            w.push_back(x);
        weights_[tap++] = torch::tensor(w, torch::kFloat64);
    }
    if (tap != names.size())
        throw ConfigError("calibration file " + calibration->string() + " is missing taps");
    calibrated_ = true;
}

std::string PerceptualScorer::name() const {
    return extractor_->name() + (calibrated_ && extractor_->calibrated() ? "" : " (uncalibrated)");
}

double PerceptualScorer::distance(const torch::Tensor& a, const torch::Tensor& b) {
    if (a.sizes() != b.sizes())
        throw InvalidInput("perceptual_distance: shape mismatch");
    torch::NoGradGuard no_grad;
    auto ba = a.dim() == 3 ? a.unsqueeze(0) : a;
    auto bb = b.dim() == 3 ? b.unsqueeze(0) : b;
    const auto ta = extractor_->taps(ba.to(torch::kFloat32));
    const auto tb = extractor_->taps(bb.to(torch::kFloat32));
    double total = 0.0;
    for (size_t i = 0; i < ta.size(); ++i) {
        auto fa = ta[i].to(torch::kFloat64);
        auto fb = tb[i].to(torch::kFloat64);
        fa = fa / (fa.pow(2).sum(1, true).sqrt() + 1e-10);
        fb = fb / (fb.pow(2).sum(1, true).sqrt() + 1e-10);
        auto d = (fa - fb).pow(2);
        if (weights_[i].defined()) {
            if (weights_[i].numel() != d.size(1))
                throw ConfigError("calibration weights for tap " + std::to_string(i) + " have " +
                                  std::to_string(weights_[i].numel()) + " entries, features have " +
                                  std::to_string(d.size(1)));
            d = d * weights_[i].view({1, -1, 1, 1});
        }
        total += d.sum(1).mean().item<double>();
    }
    return total;
}

// ---------------------------------------------------------------------------
// Heatmaps
// ---------------------------------------------------------------------------

Heatmap error_heatmap(const torch::Tensor& pred, const torch::Tensor& ref) {
    if (pred.sizes() != ref.sizes() || pred.dim() != 3)
        throw InvalidInput("error_heatmap: expected matching [C, H, W] images");
    Heatmap h;
    h.raw = (pred.to(torch::kFloat64) - ref.to(torch::kFloat64)).pow(2).sum(0);
    const double peak = h.raw.max().item<double>();
    h.normalized = peak > 0.0 ? h.raw / peak : torch::zeros_like(h.raw);

    auto bytes = (h.normalized * 255.0).round().to(torch::kUInt8).contiguous();
    cv::Mat gray(static_cast<int>(bytes.size(0)), static_cast<int>(bytes.size(1)), CV_8UC1, bytes.data_ptr<uint8_t>());
    cv::Mat bgr, rgb;
    cv::applyColorMap(gray, bgr, cv::COLORMAP_JET);
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
    h.render = {t.permute({2, 0, 1}).to(torch::kFloat32) / 255.0, ValueSpace::unit};
    return h;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

const std::vector<std::string> kMetricNames{"rmse_rgb", "rmse_lab", "psnr_rgb", "psnr_lab", "lpips",
                                            "baseline_rmse_rgb"};

std::optional<double> metric_value(const Record& r, const std::string& metric) {
    if (metric == "rmse_rgb")
        return r.rmse_rgb;
    if (metric == "rmse_lab")
        return r.rmse_lab;
    if (metric == "psnr_rgb")
        return r.psnr_rgb;
    if (metric == "psnr_lab")
        return r.psnr_lab;
    if (metric == "lpips")
        return r.lpips;
    if (metric == "baseline_rmse_rgb")
        return r.baseline_rmse_rgb;
    return std::nullopt;
}

} // namespace

std::vector<Aggregate> MetricsReport::aggregate(const std::vector<Record>& records) {
    std::vector<Aggregate> out;
    for (auto region : {Region::all, Region::shadow, Region::shadow_free}) {
        for (const auto& metric : kMetricNames) {
            std::vector<double> values;
            for (const auto& r : records)
                if (r.region == region)
                    if (auto v = metric_value(r, metric))
                        values.push_back(*v);
            if (values.empty())
                continue;
            double mean = 0.0;
            for (double v : values)
                mean += v;
            mean /= static_cast<double>(values.size());
            double var = 0.0;
            for (double v : values)
                var += (v - mean) * (v - mean);
            var /= static_cast<double>(values.size());
            out.push_back({region, metric, mean, std::sqrt(var), values.size()});
        }
    }
    return out;
}

const Aggregate* MetricsReport::find(Region region, const std::string& metric) const {
    for (const auto& a : aggregates)
        if (a.region == region && a.metric == metric)
            return &a;
    return nullptr;
}

std::string MetricsReport::to_json() const {
    nlohmann::ordered_json j;
    j["scorer"] = scorer;
    j["scorer_calibrated"] = scorer_calibrated;
    j["rgb_peak"] = rgb_peak;
    j["lab_peak"] = lab_peak;
    j["records"] = nlohmann::ordered_json::array();
    for (const auto& r : records) {
        nlohmann::ordered_json e;
        e["identifier"] = r.identifier;
        e["region"] = to_string(r.region);
        e["pixels"] = r.pixels;
        e["rmse_rgb"] = r.rmse_rgb;
        e["rmse_lab"] = r.rmse_lab;
        e["psnr_rgb"] = r.psnr_rgb;
        e["psnr_lab"] = r.psnr_lab;
        e["lpips"] = r.lpips ? nlohmann::ordered_json(*r.lpips) : nlohmann::ordered_json(nullptr);
        e["baseline_rmse_rgb"] = r.baseline_rmse_rgb;
        j["records"].push_back(e);
    }
    j["aggregates"] = nlohmann::ordered_json::array();
    for (const auto& a : aggregates)
        j["aggregates"].push_back(
            {{"region", to_string(a.region)}, {"metric", a.metric}, {"mean", a.mean}, {"stddev", a.stddev},
             {"count", a.count}});
    return j.dump(2);
}

std::string MetricsReport::to_csv() const {
    std::ostringstream os;
    os << std::setprecision(10) << "region,metric,mean,stddev,count\n";
    for (const auto& a : aggregates)
        os << to_string(a.region) << ',' << a.metric << ',' << a.mean << ',' << a.stddev << ',' << a.count << '\n';
    return os.str();
}

void MetricsReport::write(const fs::path& dir) const {
    fs::create_directories(dir);
    std::ofstream(dir / "eval_report.json") << to_json() << '\n';
    std::ofstream(dir / "eval_summary.csv") << to_csv();
}

MetricsReport evaluate_dataset(const Remover& remove, const data::Dataset& dataset, const MetricOptions& options,
                               PerceptualScorer* scorer) {
    if (options.regions.empty())
        throw ConfigError("evaluation needs at least one region");
    std::vector<const data::Sample*> order;
    for (const auto& s : dataset.samples) {
        if (!s.shadow_free_image || !s.mask)
            throw ConfigError("evaluation needs a shadow-free reference and a mask for every image (missing for '" +
                              s.identifier + "')");
        order.push_back(&s);
    }
    std::sort(order.begin(), order.end(),
              [](const data::Sample* a, const data::Sample* b) { return a->identifier < b->identifier; });
    if (options.heatmap_dir)
        fs::create_directories(*options.heatmap_dir);

    MetricsReport report;
    report.rgb_peak = options.rgb_byte_scale ? 255.0 : 1.0;
    report.lab_peak = options.lab_peak;
    report.scorer = scorer ? scorer->name() : "none";
    report.scorer_calibrated = scorer && scorer->calibrated();

    torch::NoGradGuard no_grad;
    for (const auto* s : order) {
        const auto ref_unit = s->shadow_free_image->to(ValueSpace::unit).pixels.to(torch::kFloat64);
        const auto input_unit = s->shadow_image.to(ValueSpace::unit).pixels.to(torch::kFloat64);
        auto out = remove(s->shadow_image.to(ValueSpace::model).pixels.unsqueeze(0).to(torch::kFloat32))[0];
        auto pred_unit = convert_space(out.to(torch::kFloat64), ValueSpace::model, ValueSpace::unit).clamp(0.0, 1.0);
        if (pred_unit.size(1) != ref_unit.size(1) || pred_unit.size(2) != ref_unit.size(2))
            pred_unit = resize_bilinear(pred_unit, ref_unit.size(1), ref_unit.size(2)).clamp(0.0, 1.0);

        auto to_rgb_scale = [&](const torch::Tensor& unit) {
            return options.rgb_byte_scale ? (unit * 255.0).round() : unit;
        };
        auto to_lab_input = [&](const torch::Tensor& unit) {
            return options.rgb_byte_scale ? (unit * 255.0).round() / 255.0 : unit;
        };
        const auto pred_rgb = to_rgb_scale(pred_unit), ref_rgb = to_rgb_scale(ref_unit),
                   input_rgb = to_rgb_scale(input_unit);
        const auto pred_lab = rgb_to_lab(to_lab_input(pred_unit)), ref_lab = rgb_to_lab(to_lab_input(ref_unit));

        std::optional<double> lpips;
        if (scorer)
            lpips = scorer->distance(convert_space(pred_unit, ValueSpace::unit, ValueSpace::model),
                                     convert_space(ref_unit, ValueSpace::unit, ValueSpace::model));

        for (auto region : options.regions) {
            const auto sel = region_selection(s->mask->bits, region);
            const auto count = sel.sum().item<int64_t>();
            if (count == 0)
                continue;
            Record r;
            r.identifier = s->identifier;
            r.region = region;
            r.pixels = count;
            r.rmse_rgb = rmse(pred_rgb, ref_rgb, sel);
            r.rmse_lab = rmse(pred_lab, ref_lab, sel);
            r.psnr_rgb = psnr_from_rmse(r.rmse_rgb, report.rgb_peak, options.psnr_cap);
            r.psnr_lab = psnr_from_rmse(r.rmse_lab, options.lab_peak, options.psnr_cap);
            r.baseline_rmse_rgb = rmse(input_rgb, ref_rgb, sel);
            if (region == Region::all)
                r.lpips = lpips;
            report.records.push_back(r);
        }
        if (options.heatmap_dir)
            write_image(*options.heatmap_dir / (s->identifier + ".png"), error_heatmap(pred_unit, ref_unit).render);
    }
    report.aggregates = MetricsReport::aggregate(report.records);
    return report;
}

} // namespace deshadow::metrics
