#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "deshadow/data.hpp"
#include "deshadow/features.hpp"
#include "deshadow/image.hpp"

namespace deshadow::metrics {

/// sRGB in [0, 1] to CIE Lab (D65), channel-first [3, ...]. Computed in float64.
torch::Tensor rgb_to_lab(const torch::Tensor& rgb);
/// Inverse of rgb_to_lab (no clamping).
torch::Tensor lab_to_rgb(const torch::Tensor& lab);

enum class Region { all, shadow, shadow_free };
std::string to_string(Region region);
Region parse_region(const std::string& name);
std::vector<Region> parse_regions(const std::string& comma_list);

/// Pixels a region covers: all, mask == 1 or mask == 0. Returns [H, W] bool.
torch::Tensor region_selection(const torch::Tensor& mask, Region region);

/// sqrt(mean of squared differences over the selected pixels and all
/// channels). `selection` is an [H, W] mask of pixels to include.
/// Throws UndefinedRegion when the selection is empty.
double rmse(const torch::Tensor& pred, const torch::Tensor& ref,
            const std::optional<torch::Tensor>& selection = std::nullopt);

/// 20 log10(max_value / rmse), reported as `cap` for identical inputs.
double psnr(const torch::Tensor& pred, const torch::Tensor& ref, double max_value,
            const std::optional<torch::Tensor>& selection = std::nullopt, double cap = 100.0);
double psnr_from_rmse(double rmse, double max_value, double cap = 100.0);

/// Deep-feature distance: per tap, channel-normalized features, squared
/// difference weighted per channel, spatial mean, summed over taps.
class PerceptualScorer {
public:
    /// With no calibration file every channel weight is 1 and the scorer
    /// reports itself uncalibrated. A given but missing file is a ConfigError.
    PerceptualScorer(std::shared_ptr<features::FeatureExtractor> extractor,
                     const std::optional<std::filesystem::path>& calibration = std::nullopt);

    /// Model-space [3, H, W] or [N, 3, H, W] images.
    double distance(const torch::Tensor& a, const torch::Tensor& b);
    bool calibrated() const { return calibrated_; }
    std::string name() const;

private:
    std::shared_ptr<features::FeatureExtractor> extractor_;
    std::vector<torch::Tensor> weights_; ///< per tap, [D] or undefined for unit
    bool calibrated_ = false;
};

struct Heatmap {
    torch::Tensor raw;        ///< [H, W] float64, sum over channels of (pred - ref)^2
    torch::Tensor normalized; ///< raw / max(raw), zeros when max is 0
    ImageTensor render;       ///< JET color map of `normalized`, unit space
};

Heatmap error_heatmap(const torch::Tensor& pred, const torch::Tensor& ref);

struct MetricOptions {
    std::vector<Region> regions{Region::all, Region::shadow, Region::shadow_free};
    bool rgb_byte_scale = true; ///< RGB metrics on rounded 0-255 values, else [0, 1]
    double psnr_cap = 100.0;
    double lab_peak = 100.0;
    std::optional<std::filesystem::path> heatmap_dir;
};

struct Record {
    std::string identifier;
    Region region = Region::all;
    int64_t pixels = 0;
    double rmse_rgb = 0.0;
    double rmse_lab = 0.0;
    double psnr_rgb = 0.0;
    double psnr_lab = 0.0;
    std::optional<double> lpips;
    double baseline_rmse_rgb = 0.0; ///< shadow input vs reference
};

struct Aggregate {
    Region region = Region::all;
    std::string metric;
    double mean = 0.0;
    double stddev = 0.0; ///< population
    size_t count = 0;
};

struct MetricsReport {
    std::vector<Record> records; ///< identifier order, then region order
    std::vector<Aggregate> aggregates;
    std::string scorer;
    bool scorer_calibrated = false;
    double rgb_peak = 255.0;
    double lab_peak = 100.0;

    /// Mean and population stddev of every metric per region.
    static std::vector<Aggregate> aggregate(const std::vector<Record>& records);
    const Aggregate* find(Region region, const std::string& metric) const;

    std::string to_json() const;
    std::string to_csv() const;
    /// Writes eval_report.json and eval_summary.csv into `dir`.
    void write(const std::filesystem::path& dir) const;
};

/// Maps a [1, 3, H, W] model-space shadow image to its shadow-free estimate.
using Remover = std::function<torch::Tensor(const torch::Tensor&)>;

/// Runs `remove` on every sample and scores it against the shadow-free
/// reference. Requires a shadow-free image and a mask for every sample.
MetricsReport evaluate_dataset(const Remover& remove, const data::Dataset& dataset, const MetricOptions& options = {},
                               PerceptualScorer* scorer = nullptr);

} // namespace deshadow::metrics
