#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "deshadow/image.hpp"

namespace deshadow::data {

/// One training or evaluation item. Paired layouts populate every field;
/// unpaired layouts leave `shadow_free_image` and `mask` empty.
struct Sample {
    ImageTensor shadow_image;
    std::optional<ImageTensor> shadow_free_image;
    std::optional<ShadowMask> mask;
    std::string identifier;
};

/// A shadow-free image that is not matched to any shadow image.
struct PoolImage {
    ImageTensor image;
    std::string identifier;
};

enum class ThresholdMethod { median, otsu };
enum class Layout { istd, usr, flat };
enum class Split { train, test };

ThresholdMethod parse_threshold_method(const std::string& name);
Layout parse_layout(const std::string& name);
Split parse_split(const std::string& name);
std::string to_string(Layout layout);
std::string to_string(Split split);

// ---------------------------------------------------------------------------
// Mask extraction
// ---------------------------------------------------------------------------

/// Per-pixel grayscale difference (shadow_free - shadow), averaged over RGB.
/// Both images must be unit-space and share a shape. Returns [H, W].
torch::Tensor difference_map(const ImageTensor& shadow_free, const ImageTensor& shadow);

/// Median of all values; the midpoint of the two middle values for even counts.
double median_threshold(const torch::Tensor& values);

struct OtsuThreshold {
    int bin = 0;          ///< last histogram bin assigned to the background class
    double low = 0.0;     ///< histogram range
    double high = 0.0;
    double threshold = 0.0; ///< upper edge of `bin`
};

/// Histogram bin of `value` in a 256-bin histogram over [low, high]. Bin k
/// covers (low + k*w, low + (k+1)*w], with `low` itself in bin 0.
int otsu_bin(double value, double low, double high);

/// Otsu's method over a 256-bin histogram of `values`: picks the split bin
/// maximizing inter-class variance (bin indices as class values, smallest bin
/// wins ties). Exact integer arithmetic, so results are reproducible.
OtsuThreshold otsu_threshold(const torch::Tensor& values);

/// Binarizes the difference between a shadow-free and a shadow image.
/// A pixel is marked when its difference is strictly above the threshold.
/// `dilation_radius` > 0 grows the mask with a square structuring element.
ShadowMask binarize_difference(const ImageTensor& shadow_free, const ImageTensor& shadow,
                               ThresholdMethod method = ThresholdMethod::median, int dilation_radius = 0);

/// Same thresholding applied to a precomputed [H, W] difference map.
ShadowMask binarize_map(const torch::Tensor& difference, ThresholdMethod method, int dilation_radius = 0);

double mask_iou(const ShadowMask& a, const ShadowMask& b);

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct LoadOptions {
    std::optional<int> resolution;  ///< square resize target, bilinear
    int mask_dilation = 0;
};

struct Dataset {
    Layout layout = Layout::flat;
    std::vector<Sample> samples;             ///< sorted by identifier
    std::vector<PoolImage> shadow_free_pool; ///< usr layout only
};

/// Loads a dataset. istd: `<split>_A` shadow, `<split>_B` mask (optional per
/// file, otherwise median-binarized), `<split>_C` shadow-free, matched by stem.
/// usr: `shadow_<split>` and `shadow_free`. flat: one directory of images.
Dataset load_dataset(const std::filesystem::path& root, Layout layout, Split split, const LoadOptions& options = {});

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

std::string serialize_rng(const std::mt19937_64& rng);
std::mt19937_64 deserialize_rng(const std::string& state);

/// Visits indices [0, size) in a random order, reshuffling whenever the
/// permutation is exhausted.
class PoolCursor {
public:
    explicit PoolCursor(size_t size = 0) : size_(size) {}

    size_t next(std::mt19937_64& rng);
    size_t size() const { return size_; }
    size_t position() const { return position_; }

    std::string save() const;
    void load(const std::string& state);

private:
    size_t size_ = 0;
    size_t position_ = 0;
    std::vector<size_t> order_;
};

/// Draws (shadow-free, shadow) index pairs from two independent pools, each
/// traversed without replacement within an epoch.
class UnpairedSampler {
public:
    UnpairedSampler(size_t shadow_free_count, size_t shadow_count, uint64_t seed);

    /// Returns {shadow_free_index, shadow_index}.
    std::pair<size_t, size_t> draw();

    std::string save() const;
    void load(const std::string& state);

private:
    PoolCursor free_;
    PoolCursor shadow_;
    std::mt19937_64 rng_;
};

/// Convenience wrapper returning the images themselves.
std::pair<ImageTensor, ImageTensor> sample_unpaired(const std::vector<ImageTensor>& shadow_pool,
                                                    const std::vector<ImageTensor>& shadow_free_pool,
                                                    UnpairedSampler& sampler);

/// Bounded FIFO of shadow masks used to condition the shadow-insertion
/// generator in unpaired training. Internally synchronized.
class MaskBank {
public:
    explicit MaskBank(size_t capacity = 64, uint64_t seed = 0);

    MaskBank(const MaskBank&) = delete;
    MaskBank& operator=(const MaskBank&) = delete;

    void insert(const torch::Tensor& mask);
    /// Uniform draw; throws ConfigError when empty.
    torch::Tensor sample();

    size_t size() const;
    size_t capacity() const { return capacity_; }
    std::vector<torch::Tensor> entries() const;

    struct State {
        std::vector<torch::Tensor> entries;
        std::string rng;
    };
    State save() const;
    void load(const State& state);

private:
    size_t capacity_;
    std::deque<torch::Tensor> entries_;
    std::mt19937_64 rng_;
    mutable std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Synthetic fixture
// ---------------------------------------------------------------------------

/// Paired samples with smooth color gradients and one convex polygonal
/// shadow each (3-8 vertices, constant attenuation in [0.3, 0.7]). The mask
/// is the exact rasterization of the polygon. Deterministic in `seed`.
std::vector<Sample> make_synthetic_fixture(int count, int size, uint64_t seed);

/// Writes samples in istd layout under `root/<split>_{A,B,C}`.
void write_istd(const std::filesystem::path& root, const std::vector<Sample>& samples, Split split = Split::train);

} // namespace deshadow::data
