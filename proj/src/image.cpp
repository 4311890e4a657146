#include "deshadow/image.hpp"

#include <algorithm>
#include <cctype>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "deshadow/errors.hpp"

namespace deshadow {

std::string_view to_string(ValueSpace space) {
    switch (space) {
    case ValueSpace::model: return "model";
    case ValueSpace::unit: return "unit";
    case ValueSpace::byte: return "byte";
    }
    return "unknown";
}

torch::Tensor convert_space(const torch::Tensor& t, ValueSpace from, ValueSpace to) {
    if (from == to)
        return t;
    torch::Tensor unit;
    switch (from) {
    case ValueSpace::model: unit = (t + 1.0) * 0.5; break;
    case ValueSpace::unit: unit = t; break;
    case ValueSpace::byte: unit = t / 255.0; break;
    }
    switch (to) {
    case ValueSpace::model: return unit * 2.0 - 1.0;
    case ValueSpace::unit: return unit;
    case ValueSpace::byte: return unit * 255.0;
    }
    return unit;
}

ImageTensor ImageTensor::to(ValueSpace target) const {
    return {convert_space(pixels, space, target), target};
}

namespace {

torch::Tensor mat_to_tensor(const cv::Mat& rgb8) {
    cv::Mat f;
    rgb8.convertTo(f, CV_32FC3, 1.0 / 255.0);
    auto t = torch::from_blob(f.data, {f.rows, f.cols, 3}, torch::kFloat32).clone();
    return t.permute({2, 0, 1}).contiguous();
}

cv::Mat tensor_to_mat8(const torch::Tensor& unit_chw) {
    auto t = (unit_chw.detach().to(torch::kFloat32).clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8);
    t = t.permute({1, 2, 0}).contiguous();
    cv::Mat rgb(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_8UC3, t.data_ptr<uint8_t>());
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    return bgr;
}

} // namespace

bool is_image_file(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

ImageTensor read_image(const std::filesystem::path& path, std::optional<int> resize_to) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty())
        throw DataError("cannot decode image: " + path.string());
    if (resize_to && (bgr.rows != *resize_to || bgr.cols != *resize_to))
        cv::resize(bgr, bgr, cv::Size(*resize_to, *resize_to), 0, 0, cv::INTER_LINEAR);
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    return {mat_to_tensor(rgb), ValueSpace::unit};
}

ShadowMask read_mask(const std::filesystem::path& path, std::optional<int> resize_to) {
    cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (gray.empty())
        throw DataError("cannot decode mask: " + path.string());
    if (resize_to && (gray.rows != *resize_to || gray.cols != *resize_to))
        cv::resize(gray, gray, cv::Size(*resize_to, *resize_to), 0, 0, cv::INTER_NEAREST);
    cv::Mat f;
    gray.convertTo(f, CV_32F);
    auto t = torch::from_blob(f.data, {1, f.rows, f.cols}, torch::kFloat32).clone();
    return {(t > 127.5).to(torch::kFloat32)};
}

void write_image(const std::filesystem::path& path, const ImageTensor& image) {
    auto unit = image.to(ValueSpace::unit).pixels;
    if (!cv::imwrite(path.string(), tensor_to_mat8(unit)))
        throw DataError("cannot write image: " + path.string());
}

void write_mask(const std::filesystem::path& path, const ShadowMask& mask) {
    auto t = (mask.bits.detach().squeeze(0) > 0.5).to(torch::kUInt8).mul(255).contiguous();
    cv::Mat gray(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_8UC1, t.data_ptr<uint8_t>());
    if (!cv::imwrite(path.string(), gray, {cv::IMWRITE_PNG_BILEVEL, 1}))
        throw DataError("cannot write mask: " + path.string());
}

torch::Tensor resize_bilinear(const torch::Tensor& chw, int64_t height, int64_t width) {
    if (chw.size(1) == height && chw.size(2) == width)
        return chw;
    namespace F = torch::nn::functional;
    return F::interpolate(chw.unsqueeze(0),
                          F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{height, width})
                              .mode(torch::kBilinear)
                              .align_corners(false))
        .squeeze(0);
}

torch::Tensor quantize_unit(const torch::Tensor& unit) {
    return (unit.clamp(0.0, 1.0) * 255.0).round() / 255.0;
}

} // namespace deshadow
