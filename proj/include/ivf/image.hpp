#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ivf {

/// Row-major dense raster. Rows index y, columns index x.
template <typename Scalar>
using RasterT = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Raster = RasterT<double>;

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class SizeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Single-channel intensity image with every pixel finite and in [0, 1].
class Image {
 public:
  Image() = default;
  /// Throws std::invalid_argument when any pixel is non-finite or outside [0, 1].
  explicit Image(Raster pixels);
  Image(std::size_t width, std::size_t height, double fill = 0.0);

  static Image from_pixels(std::size_t width, std::size_t height, std::span<const double> pixels);

  std::size_t width() const { return static_cast<std::size_t>(pixels_.cols()); }
  std::size_t height() const { return static_cast<std::size_t>(pixels_.rows()); }
  std::size_t size() const { return static_cast<std::size_t>(pixels_.size()); }
  bool empty() const { return pixels_.size() == 0; }

  double operator()(std::size_t y, std::size_t x) const {
    return pixels_(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x));
  }
  const Raster& pixels() const { return pixels_; }
  std::span<const double> data() const { return {pixels_.data(), size()}; }

  Image transposed() const;

  friend bool operator==(const Image& a, const Image& b) {
    return a.pixels_.rows() == b.pixels_.rows() && a.pixels_.cols() == b.pixels_.cols() &&
           (a.pixels_ == b.pixels_).all();
  }

 private:
  Raster pixels_;
};

/// Per-pixel gradient magnitude, non-negative.
struct GradientMap {
  Raster values;
  std::size_t width() const { return static_cast<std::size_t>(values.cols()); }
  std::size_t height() const { return static_cast<std::size_t>(values.rows()); }
};

struct Histogram256 {
  std::array<std::uint64_t, 256> bins{};
  std::uint64_t total = 0;
};

Image load_pgm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> save_pgm(const Image& img, bool binary = true);

Image read_pgm_file(const std::string& path);
void write_pgm_file(const Image& img, const std::string& path, bool binary = true);

/// 3x3 Sobel magnitude with replicate padding. Requires at least 3x3.
GradientMap sobel_gradient(const Image& img);

/// Signed Sobel responses (gx, gy) with replicate padding.
std::pair<Raster, Raster> sobel_components(const Raster& img);

/// Normalized isotropic Gaussian kernel, size x size.
Raster gaussian_window(int size, double sigma);

/// Histogram bin of an intensity: min(floor(v * 256), 255).
inline int intensity_bin(double v) {
  const int b = static_cast<int>(std::floor(v * 256.0));
  return b < 0 ? 0 : (b > 255 ? 255 : b);
}

Histogram256 histogram256(const Image& img);

std::vector<Image> extract_patches(const Image& img, std::size_t size, std::size_t stride);

/// Crops a size x size window with top-left corner (y0, x0).
Image crop(const Image& img, std::size_t y0, std::size_t x0, std::size_t size);

// ---------------------------------------------------------------------------
// Fixed-kernel filters shared by the losses (through the autodiff graph) and
// the metrics. Accumulation order is part of the contract: both paths must
// produce bit-identical results.

/// Cross-correlation with a square odd kernel, replicate border, same size output.
template <typename Derived, typename KernelDerived>
RasterT<typename Derived::Scalar> correlate_replicate(const Eigen::ArrayBase<Derived>& src,
                                                      const Eigen::ArrayBase<KernelDerived>& kernel) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index h = src.rows();
  const Eigen::Index w = src.cols();
  const Eigen::Index k = kernel.rows();
  const Eigen::Index r = k / 2;
  RasterT<Scalar> out(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      Scalar acc = 0;
      for (Eigen::Index ky = 0; ky < k; ++ky) {
        const Eigen::Index sy = std::clamp<Eigen::Index>(y + ky - r, 0, h - 1);
        for (Eigen::Index kx = 0; kx < k; ++kx) {
          const Eigen::Index sx = std::clamp<Eigen::Index>(x + kx - r, 0, w - 1);
          acc += kernel(ky, kx) * src(sy, sx);
        }
      }
      out(y, x) = acc;
    }
  }
  return out;
}

/// Cross-correlation keeping only positions where the kernel lies fully inside.
template <typename Derived, typename KernelDerived>
RasterT<typename Derived::Scalar> correlate_valid(const Eigen::ArrayBase<Derived>& src,
                                                  const Eigen::ArrayBase<KernelDerived>& kernel) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index kh = kernel.rows();
  const Eigen::Index kw = kernel.cols();
  if (src.rows() < kh || src.cols() < kw) {
    throw SizeError("window larger than image");
  }
  const Eigen::Index oh = src.rows() - kh + 1;
  const Eigen::Index ow = src.cols() - kw + 1;
  RasterT<Scalar> out(oh, ow);
  for (Eigen::Index y = 0; y < oh; ++y) {
    for (Eigen::Index x = 0; x < ow; ++x) {
      Scalar acc = 0;
      for (Eigen::Index ky = 0; ky < kh; ++ky) {
        for (Eigen::Index kx = 0; kx < kw; ++kx) {
          acc += kernel(ky, kx) * src(y + ky, x + kx);
        }
      }
      out(y, x) = acc;
    }
  }
  return out;
}

/// Sequential left-to-right sum; Eigen's vectorized reductions reorder additions.
template <typename Derived>
typename Derived::Scalar ordered_sum(const Eigen::DenseBase<Derived>& a) {
  typename Derived::Scalar acc = 0;
  for (Eigen::Index y = 0; y < a.rows(); ++y) {
    for (Eigen::Index x = 0; x < a.cols(); ++x) acc += a(y, x);
  }
  return acc;
}

template <typename Derived>
typename Derived::Scalar ordered_mean(const Eigen::DenseBase<Derived>& a) {
  return ordered_sum(a) / static_cast<typename Derived::Scalar>(a.size());
}

inline const Raster& sobel_kernel_x() {
  static const Raster k = (Raster(3, 3) << -1, 0, 1, -2, 0, 2, -1, 0, 1).finished();
  return k;
}
inline const Raster& sobel_kernel_y() {
  static const Raster k = (Raster(3, 3) << -1, -2, -1, 0, 0, 0, 1, 2, 1).finished();
  return k;
}

}  // namespace ivf
