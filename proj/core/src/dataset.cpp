#include "odenet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "odenet/errors.hpp"

namespace odenet {

void Dataset::validate() const {
  if (features.rank() != 2 || features.dim(0) != labels.size()) {
    throw FormatError("dataset features " + shape_string(features.shape()) + " do not match " +
                      std::to_string(labels.size()) + " labels");
  }
  if (!features.all_finite()) throw FormatError("dataset contains non-finite features");
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw FormatError("label " + std::to_string(l) + " outside [0, " +
                        std::to_string(num_classes) + ")");
    }
  }
}

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  end = std::min(end, size());
  begin = std::min(begin, end);
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return gather(idx);
}

Dataset Dataset::gather(std::span<const std::size_t> indices) const {
  const std::size_t d = input_dim();
  Dataset out;
  out.num_classes = num_classes;
  out.features = Tensor(Shape{indices.size(), d});
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = features.row(indices[i]);
    std::copy(src.begin(), src.end(), out.features.row(i).begin());
    out.labels.push_back(labels[indices[i]]);
  }
  return out;
}

std::string_view to_string(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::TwoSpirals:
      return "two_spirals";
    case SyntheticKind::Circles:
      return "circles";
    case SyntheticKind::Blobs:
      return "blobs";
  }
  return "unknown";
}

std::optional<SyntheticKind> parse_synthetic_kind(std::string_view name) {
  if (name == "two_spirals" || name == "spirals") return SyntheticKind::TwoSpirals;
  if (name == "circles") return SyntheticKind::Circles;
  if (name == "blobs") return SyntheticKind::Blobs;
  return std::nullopt;
}

Dataset make_synthetic(SyntheticKind kind, std::size_t n, double noise, std::uint64_t seed) {
  if (noise < 0.0) throw ConfigError("noise must be non-negative");
  const std::size_t classes = kind == SyntheticKind::Blobs ? 3 : 2;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  constexpr double pi = std::numbers::pi;

  Tensor features(Shape{n, 2});
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Round-robin labels keep the classes balanced (counts differ by <= 1).
    const auto c = static_cast<int>(i % classes);
    double x = 0.0;
    double y = 0.0;
    switch (kind) {
      case SyntheticKind::TwoSpirals: {
        const double t = 0.25 + (3.5 * pi - 0.25) * unif(rng);
        const double angle = t + c * pi;
        x = t * std::cos(angle);
        y = t * std::sin(angle);
        x += noise * gauss(rng);
        y += noise * gauss(rng);
        break;
      }
      case SyntheticKind::Circles: {
        const double angle = 2.0 * pi * unif(rng);
        const double r = 1.0 + c + noise * gauss(rng);
        x = r * std::cos(angle);
        y = r * std::sin(angle);
        break;
      }
      case SyntheticKind::Blobs: {
        const double centre = 2.0 * pi * c / 3.0;
        const double spread = 0.5 + noise;
        x = 3.0 * std::cos(centre) + spread * gauss(rng);
        y = 3.0 * std::sin(centre) + spread * gauss(rng);
        break;
      }
    }
    features.at(i, 0) = x;
    features.at(i, 1) = y;
    labels[i] = c;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Dataset raw{std::move(features), std::move(labels), classes};
  return raw.gather(order);
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError(path + ": truncated header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

std::ifstream open_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return in;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 const IdxOptions& options) {
  std::ifstream images = open_binary(images_path);
  std::ifstream labels = open_binary(labels_path);

  const std::uint32_t img_magic = read_be32(images, images_path);
  if (img_magic != 0x00000803) {
    throw FormatError(images_path + ": bad magic for IDX images");
  }
  const std::size_t n_img = read_be32(images, images_path);
  const std::size_t rows = read_be32(images, images_path);
  const std::size_t cols = read_be32(images, images_path);

  const std::uint32_t lab_magic = read_be32(labels, labels_path);
  if (lab_magic != 0x00000801) {
    throw FormatError(labels_path + ": bad magic for IDX labels");
  }
  const std::size_t n_lab = read_be32(labels, labels_path);
  if (n_img != n_lab) {
    throw FormatError("IDX dimension mismatch: " + std::to_string(n_img) + " images vs " +
                      std::to_string(n_lab) + " labels");
  }
  if (options.pool2x2 && (rows % 2 != 0 || cols % 2 != 0)) {
    throw FormatError("2x2 pooling needs even image dimensions");
  }

  const std::size_t n = options.limit > 0 ? std::min(options.limit, n_img) : n_img;
  const std::size_t pixels = rows * cols;
  const std::size_t out_rows = options.pool2x2 ? rows / 2 : rows;
  const std::size_t out_cols = options.pool2x2 ? cols / 2 : cols;

  Dataset data;
  data.features = Tensor(Shape{n, out_rows * out_cols});
  data.labels.resize(n);

  std::vector<unsigned char> buffer(pixels);
  for (std::size_t i = 0; i < n; ++i) {
    if (!images.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(pixels))) {
      throw FormatError(images_path + ": truncated payload at image " + std::to_string(i));
    }
    auto dst = data.features.row(i);
    if (options.pool2x2) {
      for (std::size_t r = 0; r < out_rows; ++r) {
        for (std::size_t c = 0; c < out_cols; ++c) {
          const std::size_t base = 2 * r * cols + 2 * c;
          const double s = buffer[base] + buffer[base + 1] + buffer[base + cols] +
                           buffer[base + cols + 1];
          dst[r * out_cols + c] = s / (4.0 * 255.0);
        }
      }
    } else {
      for (std::size_t p = 0; p < pixels; ++p) dst[p] = buffer[p] / 255.0;
    }
  }
  std::vector<unsigned char> lab(n);
  if (!labels.read(reinterpret_cast<char*>(lab.data()), static_cast<std::streamsize>(n))) {
    throw FormatError(labels_path + ": truncated payload");
  }
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    data.labels[i] = lab[i];
    max_label = std::max(max_label, data.labels[i]);
  }
  data.num_classes = std::max<std::size_t>(10, static_cast<std::size_t>(max_label) + 1);
  return data;
}

}  // namespace odenet
