#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "odenet/tensor.hpp"

namespace odenet {

struct Dataset {
  Tensor features;  // [N, input_dim]
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t input_dim() const { return features.rank() == 2 ? features.dim(1) : 0; }

  /// Throws FormatError on non-finite features or out-of-range labels.
  void validate() const;
  Dataset slice(std::size_t begin, std::size_t end) const;
  Dataset gather(std::span<const std::size_t> indices) const;
};

enum class SyntheticKind { TwoSpirals, Circles, Blobs };

std::string_view to_string(SyntheticKind kind);
std::optional<SyntheticKind> parse_synthetic_kind(std::string_view name);

/// Balanced synthetic classification data, deterministic in `seed`.
///
/// TwoSpirals: t ~ U[0.25, 3.5 pi], r = t, angle = t + c pi, point
///   (r cos angle, r sin angle) + N(0, noise^2) per coordinate; 2 classes.
/// Circles: radius 1 + c plus radial noise, uniform angle; 2 classes.
/// Blobs: three isotropic Gaussians of std 0.5 + noise centred on a circle
///   of radius 3; 3 classes.
/// Samples are shuffled with the same seed after generation.
Dataset make_synthetic(SyntheticKind kind, std::size_t n, double noise, std::uint64_t seed);

struct IdxOptions {
  std::size_t limit = 0;  // 0 = all
  bool pool2x2 = false;   // 28x28 -> 14x14 mean pooling
};

/// Read an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled to [0, 1] and flattened.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 const IdxOptions& options = {});

}  // namespace odenet
