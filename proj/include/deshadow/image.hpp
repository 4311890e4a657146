#pragma once

#include <filesystem>
#include <optional>
#include <string_view>

#include <torch/torch.h>

namespace deshadow {

/// Value range an image tensor is expressed in.
enum class ValueSpace {
    model, ///< [-1, 1], what the generators consume and emit
    unit,  ///< [0, 1]
    byte,  ///< [0, 255]
};

std::string_view to_string(ValueSpace space);

/// RGB image stored channel-first as a float tensor of shape [3, H, W].
/// The space tag travels with the pixels so conversions are explicit.
struct ImageTensor {
    torch::Tensor pixels;
    ValueSpace space = ValueSpace::unit;

    int64_t height() const { return pixels.size(1); }
    int64_t width() const { return pixels.size(2); }

    ImageTensor to(ValueSpace target) const;
};

/// Binary shadow map of shape [1, H, W]; 1 marks a shadow-affected pixel.
struct ShadowMask {
    torch::Tensor bits;

    int64_t height() const { return bits.size(1); }
    int64_t width() const { return bits.size(2); }
    int64_t count() const { return bits.sum().item<int64_t>(); }
};

/// Converts a tensor between value spaces (works on any shape).
torch::Tensor convert_space(const torch::Tensor& t, ValueSpace from, ValueSpace to);

/// Decodes an 8-bit PNG/JPEG into a unit-space RGB image. When `resize_to`
/// is set the image is resampled bilinearly to a square of that size.
/// Throws DataError naming the file when decoding fails.
ImageTensor read_image(const std::filesystem::path& path, std::optional<int> resize_to = std::nullopt);

/// Reads a mask image; any pixel above mid-gray is a shadow pixel.
ShadowMask read_mask(const std::filesystem::path& path, std::optional<int> resize_to = std::nullopt);

/// Writes an 8-bit RGB PNG (values are clamped and rounded).
void write_image(const std::filesystem::path& path, const ImageTensor& image);

/// Writes a 1-bit grayscale PNG.
void write_mask(const std::filesystem::path& path, const ShadowMask& mask);

/// Bilinear resampling of a [C, H, W] tensor.
torch::Tensor resize_bilinear(const torch::Tensor& chw, int64_t height, int64_t width);

/// Rounds a unit-space tensor onto the 8-bit grid and back.
torch::Tensor quantize_unit(const torch::Tensor& unit);

bool is_image_file(const std::filesystem::path& path);

} // namespace deshadow
