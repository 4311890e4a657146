#include "deshadow/data.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include "deshadow/errors.hpp"

namespace fs = std::filesystem;

namespace deshadow::data {

ThresholdMethod parse_threshold_method(const std::string& name) {
    if (name == "median")
        return ThresholdMethod::median;
    if (name == "otsu")
        return ThresholdMethod::otsu;
    throw ConfigError("unknown threshold method '" + name + "' (expected median|otsu)");
}

Layout parse_layout(const std::string& name) {
    if (name == "istd")
        return Layout::istd;
    if (name == "usr")
        return Layout::usr;
    if (name == "flat")
        return Layout::flat;
    throw ConfigError("unknown dataset layout '" + name + "' (expected istd|usr|flat)");
}

Split parse_split(const std::string& name) {
    if (name == "train")
        return Split::train;
    if (name == "test")
        return Split::test;
    throw ConfigError("unknown split '" + name + "' (expected train|test)");
}

std::string to_string(Layout layout) {
    switch (layout) {
    case Layout::istd: return "istd";
    case Layout::usr: return "usr";
    case Layout::flat: return "flat";
    }
    return "unknown";
}

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

// ---------------------------------------------------------------------------

torch::Tensor difference_map(const ImageTensor& shadow_free, const ImageTensor& shadow) {
    if (!shadow_free.pixels.defined() || !shadow.pixels.defined())
        throw InvalidInput("difference_map: undefined image");
    if (shadow_free.pixels.sizes() != shadow.pixels.sizes())
        throw InvalidInput("difference_map: shape mismatch");
    auto a = shadow_free.to(ValueSpace::unit).pixels.to(torch::kFloat64);
    auto b = shadow.to(ValueSpace::unit).pixels.to(torch::kFloat64);
    if (!torch::isfinite(a).all().item<bool>() || !torch::isfinite(b).all().item<bool>())
        throw InvalidInput("difference_map: non-finite pixels");
    return (a - b).mean(0);
}

double median_threshold(const torch::Tensor& values) {
    auto flat = values.detach().to(torch::kFloat64).flatten();
    const auto n = flat.numel();
    if (n == 0)
        throw InvalidInput("median of an empty tensor");
    auto sorted = std::get<0>(flat.sort());
    auto acc = sorted.accessor<double, 1>();
    if (n % 2 == 1)
        return acc[n / 2];
    return 0.5 * (acc[n / 2 - 1] + acc[n / 2]);
}

int otsu_bin(double value, double low, double high) {
    if (high <= low)
        return 0;
    const double width = (high - low) / 256.0;
    const int bin = static_cast<int>(std::ceil((value - low) / width)) - 1;
    return std::clamp(bin, 0, 255);
}

OtsuThreshold otsu_threshold(const torch::Tensor& values) {
    auto flat = values.detach().to(torch::kFloat64).contiguous().flatten();
    if (flat.numel() == 0)
        throw InvalidInput("otsu threshold of an empty tensor");
    OtsuThreshold result;
    result.low = flat.min().item<double>();
    result.high = flat.max().item<double>();
    if (result.high <= result.low) {
        result.threshold = result.low;
        return result;
    }

    std::array<int64_t, 256> histogram{};
    auto acc = flat.accessor<double, 1>();
    for (int64_t i = 0; i < flat.numel(); ++i)
        ++histogram[otsu_bin(acc[i], result.low, result.high)];

    int64_t total = 0, total_sum = 0;
    for (int k = 0; k < 256; ++k) {
        total += histogram[k];
        total_sum += k * histogram[k];
    }

    // Between-class variance is proportional to (N*S0 - n0*S)^2 / (n0*n1);
    // compare candidates by cross-multiplication to stay exact.
    using i128 = __int128;
    i128 best_num = -1, best_den = 1;
    int64_t n0 = 0, s0 = 0;
    for (int k = 0; k < 255; ++k) {
        n0 += histogram[k];
        s0 += k * histogram[k];
        const int64_t n1 = total - n0;
        if (n0 == 0 || n1 == 0)
            continue;
        const i128 diff = static_cast<i128>(total) * s0 - static_cast<i128>(n0) * total_sum;
        const i128 num = diff * diff;
        const i128 den = static_cast<i128>(n0) * n1;
        if (best_num < 0 || num * best_den > best_num * den) {
            best_num = num;
            best_den = den;
            result.bin = k;
        }
    }
    result.threshold = result.low + (result.high - result.low) * (result.bin + 1) / 256.0;
    return result;
}

namespace {

torch::Tensor dilate(const torch::Tensor& mask_hw, int radius) {
    if (radius <= 0)
        return mask_hw;
    namespace F = torch::nn::functional;
    return F::max_pool2d(mask_hw.unsqueeze(0).unsqueeze(0),
                         F::MaxPool2dFuncOptions(2 * radius + 1).stride(1).padding(radius))
        .squeeze(0)
        .squeeze(0);
}

} // namespace

ShadowMask binarize_map(const torch::Tensor& difference, ThresholdMethod method, int dilation_radius) {
    auto d = difference.detach().to(torch::kFloat64);
    if (d.dim() != 2)
        throw InvalidInput("binarize_map expects an [H, W] difference map");
    if (!torch::isfinite(d).all().item<bool>())
        throw InvalidInput("binarize_map: non-finite difference values");
    torch::Tensor bits;
    if (method == ThresholdMethod::median) {
        bits = d > median_threshold(d);
    } else {
        const auto otsu = otsu_threshold(d);
        if (otsu.high <= otsu.low) {
            bits = torch::zeros_like(d, torch::kBool);
        } else {
            auto flat = d.contiguous().flatten();
            auto acc = flat.accessor<double, 1>();
            bits = torch::empty({flat.numel()}, torch::kBool);
            auto out = bits.accessor<bool, 1>();
            for (int64_t i = 0; i < flat.numel(); ++i)
                out[i] = otsu_bin(acc[i], otsu.low, otsu.high) > otsu.bin;
            bits = bits.view(d.sizes());
        }
    }
    auto mask = dilate(bits.to(torch::kFloat32), dilation_radius);
    return {mask.unsqueeze(0)};
}

ShadowMask binarize_difference(const ImageTensor& shadow_free, const ImageTensor& shadow, ThresholdMethod method,
                               int dilation_radius) {
    return binarize_map(difference_map(shadow_free, shadow), method, dilation_radius);
}

double mask_iou(const ShadowMask& a, const ShadowMask& b) {
    auto x = a.bits > 0.5;
    auto y = b.bits > 0.5;
    const auto inter = (x & y).sum().item<int64_t>();
    const auto uni = (x | y).sum().item<int64_t>();
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<fs::path> list_images(const fs::path& dir) {
    if (!fs::is_directory(dir))
        throw ConfigError("dataset directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && is_image_file(entry.path()))
            files.push_back(entry.path());
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.stem().string() < b.stem().string(); });
    return files;
}

std::map<std::string, fs::path> index_by_stem(const std::vector<fs::path>& files) {
    std::map<std::string, fs::path> index;
    for (const auto& f : files)
        index.emplace(f.stem().string(), f);
    return index;
}

} // namespace

Dataset load_dataset(const fs::path& root, Layout layout, Split split, const LoadOptions& options) {
    if (!fs::is_directory(root))
        throw ConfigError("dataset root not found: " + root.string());
    Dataset dataset;
    dataset.layout = layout;
    const auto split_name = to_string(split);

    switch (layout) {
    case Layout::istd: {
        const auto shadow_files = list_images(root / (split_name + "_A"));
        const auto free_index = index_by_stem(list_images(root / (split_name + "_C")));
        const auto mask_dir = root / (split_name + "_B");
        const auto mask_index =
            fs::is_directory(mask_dir) ? index_by_stem(list_images(mask_dir)) : std::map<std::string, fs::path>{};
        for (const auto& file : shadow_files) {
            const auto stem = file.stem().string();
            auto free_it = free_index.find(stem);
            if (free_it == free_index.end())
                throw DataError("no shadow-free counterpart for " + file.string());
            Sample s;
            s.identifier = stem;
            s.shadow_image = read_image(file, options.resolution);
            s.shadow_free_image = read_image(free_it->second, options.resolution);
            if (s.shadow_free_image->pixels.sizes() != s.shadow_image.pixels.sizes())
                throw DataError("shape mismatch between " + file.string() + " and " + free_it->second.string());
            if (auto mask_it = mask_index.find(stem); mask_it != mask_index.end()) {
                s.mask = read_mask(mask_it->second, options.resolution);
                if (s.mask->height() != s.shadow_image.height() || s.mask->width() != s.shadow_image.width())
                    throw DataError("mask shape mismatch: " + mask_it->second.string());
                if (options.mask_dilation > 0)
                    s.mask = ShadowMask{dilate(s.mask->bits.squeeze(0), options.mask_dilation).unsqueeze(0)};
            } else {
                s.mask = binarize_difference(*s.shadow_free_image, s.shadow_image, ThresholdMethod::median,
                                             options.mask_dilation);
            }
            dataset.samples.push_back(std::move(s));
        }
        break;
    }
    case Layout::usr: {
        for (const auto& file : list_images(root / ("shadow_" + split_name))) {
            Sample s;
            s.identifier = file.stem().string();
            s.shadow_image = read_image(file, options.resolution);
            dataset.samples.push_back(std::move(s));
        }
        for (const auto& file : list_images(root / "shadow_free"))
            dataset.shadow_free_pool.push_back({read_image(file, options.resolution), file.stem().string()});
        break;
    }
    case Layout::flat: {
        for (const auto& file : list_images(root)) {
            Sample s;
            s.identifier = file.stem().string();
            s.shadow_image = read_image(file, options.resolution);
            dataset.samples.push_back(std::move(s));
        }
        break;
    }
    }
    return dataset;
}

// ---------------------------------------------------------------------------

std::string serialize_rng(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

std::mt19937_64 deserialize_rng(const std::string& state) {
    std::istringstream is(state);
    std::mt19937_64 rng;
    is >> rng;
    if (is.fail())
        throw CorruptCheckpoint("malformed rng state");
    return rng;
}

size_t PoolCursor::next(std::mt19937_64& rng) {
    if (size_ == 0)
        throw ConfigError("cannot sample from an empty pool");
    if (order_.size() != size_ || position_ >= order_.size()) {
        order_.resize(size_);
        std::iota(order_.begin(), order_.end(), size_t{0});
        std::shuffle(order_.begin(), order_.end(), rng);
        position_ = 0;
    }
    return order_[position_++];
}

std::string PoolCursor::save() const {
    std::ostringstream os;
    os << size_ << ' ' << position_ << ' ' << order_.size();
    for (auto i : order_)
        os << ' ' << i;
    return os.str();
}

void PoolCursor::load(const std::string& state) {
    std::istringstream is(state);
    size_t n = 0;
    is >> size_ >> position_ >> n;
    order_.assign(n, 0);
    for (auto& i : order_)
        is >> i;
    if (is.fail())
        throw CorruptCheckpoint("malformed sampler state");
}

UnpairedSampler::UnpairedSampler(size_t shadow_free_count, size_t shadow_count, uint64_t seed)
    : free_(shadow_free_count), shadow_(shadow_count), rng_(seed) {
    if (shadow_free_count == 0 || shadow_count == 0)
        throw ConfigError("unpaired sampling needs non-empty shadow and shadow-free pools");
}

std::pair<size_t, size_t> UnpairedSampler::draw() {
    const auto u = free_.next(rng_);
    const auto v = shadow_.next(rng_);
    return {u, v};
}

std::string UnpairedSampler::save() const {
    return free_.save() + "\n" + shadow_.save() + "\n" + serialize_rng(rng_);
}

void UnpairedSampler::load(const std::string& state) {
    std::istringstream is(state);
    std::string a, b, r;
    std::getline(is, a);
    std::getline(is, b);
    std::getline(is, r);
    free_.load(a);
    shadow_.load(b);
    rng_ = deserialize_rng(r);
}

std::pair<ImageTensor, ImageTensor> sample_unpaired(const std::vector<ImageTensor>& shadow_pool,
                                                    const std::vector<ImageTensor>& shadow_free_pool,
                                                    UnpairedSampler& sampler) {
    if (shadow_pool.empty() || shadow_free_pool.empty())
        throw ConfigError("sample_unpaired: empty pool");
    auto [u, v] = sampler.draw();
    return {shadow_free_pool.at(u), shadow_pool.at(v)};
}

// ---------------------------------------------------------------------------

MaskBank::MaskBank(size_t capacity, uint64_t seed) : capacity_(capacity), rng_(seed) {
    if (capacity == 0)
        throw ConfigError("mask bank capacity must be positive");
}

void MaskBank::insert(const torch::Tensor& mask) {
    std::lock_guard lock(mutex_);
    entries_.push_back(mask.detach().to(torch::kFloat32).clone());
    while (entries_.size() > capacity_)
        entries_.pop_front();
}

torch::Tensor MaskBank::sample() {
    std::lock_guard lock(mutex_);
    if (entries_.empty())
        throw ConfigError("mask bank is empty");
    std::uniform_int_distribution<size_t> pick(0, entries_.size() - 1);
    return entries_[pick(rng_)];
}

size_t MaskBank::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

std::vector<torch::Tensor> MaskBank::entries() const {
    std::lock_guard lock(mutex_);
    return {entries_.begin(), entries_.end()};
}

MaskBank::State MaskBank::save() const {
    std::lock_guard lock(mutex_);
    return {{entries_.begin(), entries_.end()}, serialize_rng(rng_)};
}

void MaskBank::load(const State& state) {
    std::lock_guard lock(mutex_);
    entries_.assign(state.entries.begin(), state.entries.end());
    rng_ = deserialize_rng(state.rng);
}

// ---------------------------------------------------------------------------

namespace {

struct Point {
    double x, y;
};

torch::Tensor rasterize_convex(const std::vector<Point>& poly, int size) {
    auto mask = torch::zeros({1, size, size}, torch::kFloat32);
    auto acc = mask.accessor<float, 3>();
    const size_t n = poly.size();
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            bool pos = false, neg = false;
            for (size_t i = 0; i < n; ++i) {
                const auto& a = poly[i];
                const auto& b = poly[(i + 1) % n];
                const double cross = (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
                pos |= cross > 0;
                neg |= cross < 0;
            }
            if (!(pos && neg))
                acc[0][y][x] = 1.0f;
        }
    }
    return mask;
}

} // namespace

std::vector<Sample> make_synthetic_fixture(int count, int size, uint64_t seed) {
    if (count < 1)
        throw InvalidInput("fixture count must be >= 1");
    if (size < 32)
        throw InvalidInput("fixture size must be >= 32");
    const int width = std::max<int>(3, static_cast<int>(std::to_string(count - 1).size()));

    std::mt19937_64 rng(seed);
    auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

    auto ys = torch::linspace(-0.5, 0.5, size, torch::kFloat64).view({size, 1}).expand({size, size});
    auto xs = torch::linspace(-0.5, 0.5, size, torch::kFloat64).view({1, size}).expand({size, size});

    std::vector<Sample> samples;
    samples.reserve(count);
    for (int i = 0; i < count; ++i) {
        std::vector<torch::Tensor> channels;
        for (int c = 0; c < 3; ++c) {
            const double base = uniform(0.35, 0.75);
            const double gx = uniform(-0.2, 0.2);
            const double gy = uniform(-0.2, 0.2);
            channels.push_back(base + gx * xs + gy * ys);
        }
        auto shadow_free = torch::stack(channels).to(torch::kFloat32);

        // Vertices on a circle sorted by angle form a convex polygon. Redraw
        // until the area is well inside (0, 1/2) of the frame.
        torch::Tensor mask;
        for (;;) {
            const int vertices = std::uniform_int_distribution<int>(3, 8)(rng);
            const double cx = uniform(0.35, 0.65) * size;
            const double cy = uniform(0.35, 0.65) * size;
            const double radius = uniform(0.2, 0.33) * size;
            std::vector<double> angles(vertices);
            for (auto& a : angles)
                a = uniform(0.0, 2.0 * std::numbers::pi);
            std::sort(angles.begin(), angles.end());
            std::vector<Point> poly;
            for (double a : angles)
                poly.push_back({cx + radius * std::cos(a), cy + radius * std::sin(a)});
            mask = rasterize_convex(poly, size);
            const double fraction = mask.sum().item<double>() / (size * size);
            if (fraction >= 0.05 && fraction <= 0.45)
                break;
        }

        const double attenuation = uniform(0.3, 0.7);
        auto shadow = shadow_free * (1.0 - mask * (1.0 - attenuation));

        Sample s;
        std::ostringstream id;
        id << "fixture_" << std::setw(width) << std::setfill('0') << i;
        s.identifier = id.str();
        s.shadow_image = {shadow.contiguous(), ValueSpace::unit};
        s.shadow_free_image = ImageTensor{shadow_free.contiguous(), ValueSpace::unit};
        s.mask = ShadowMask{mask};
        samples.push_back(std::move(s));
    }
    return samples;
}

void write_istd(const fs::path& root, const std::vector<Sample>& samples, Split split) {
    const auto name = to_string(split);
    const auto dir_a = root / (name + "_A");
    const auto dir_b = root / (name + "_B");
    const auto dir_c = root / (name + "_C");
    for (const auto& d : {dir_a, dir_b, dir_c})
        fs::create_directories(d);
    for (const auto& s : samples) {
        if (!s.shadow_free_image || !s.mask)
            throw InvalidInput("write_istd needs paired samples with masks: " + s.identifier);
        write_image(dir_a / (s.identifier + ".png"), s.shadow_image);
        write_mask(dir_b / (s.identifier + ".png"), *s.mask);
        write_image(dir_c / (s.identifier + ".png"), *s.shadow_free_image);
    }
}

} // namespace deshadow::data
