#include "ivf/image.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <sstream>

namespace ivf {

namespace {

void check_range(const Raster& px) {
  for (Eigen::Index i = 0; i < px.size(); ++i) {
    const double v = px.data()[i];
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw std::invalid_argument("image pixel " + std::to_string(i) + " outside [0, 1]: " +
                                  std::to_string(v));
    }
  }
}

// Netpbm header tokenizer: whitespace separated, '#' comments run to end of line.
class PgmReader {
 public:
  explicit PgmReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const auto c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
      } else if (std::isspace(c)) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::uint64_t read_uint(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::uint64_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 0xFFFFFFFFull) throw ParseError(std::string("overflow in ") + what, start);
      ++pos_;
    }
    if (pos_ == start) {
      if (pos_ >= bytes_.size()) throw ParseError(std::string("truncated data reading ") + what, pos_);
      throw ParseError(std::string("expected integer for ") + what, pos_);
    }
    return v;
  }

  std::uint8_t byte() {
    if (pos_ >= bytes_.size()) throw ParseError("truncated data", pos_);
    return bytes_[pos_++];
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Image::Image(Raster pixels) : pixels_(std::move(pixels)) { check_range(pixels_); }

Image::Image(std::size_t width, std::size_t height, double fill)
    : pixels_(Raster::Constant(static_cast<Eigen::Index>(height), static_cast<Eigen::Index>(width), fill)) {
  check_range(pixels_);
}

Image Image::from_pixels(std::size_t width, std::size_t height, std::span<const double> pixels) {
  if (pixels.size() != width * height) {
    throw std::invalid_argument("pixel count " + std::to_string(pixels.size()) + " != " +
                                std::to_string(width) + "x" + std::to_string(height));
  }
  Raster r(static_cast<Eigen::Index>(height), static_cast<Eigen::Index>(width));
  std::copy(pixels.begin(), pixels.end(), r.data());
  return Image(std::move(r));
}

Image Image::transposed() const { return Image(Raster(pixels_.transpose())); }

Image load_pgm(std::span<const std::uint8_t> bytes) {
  PgmReader rd(bytes);
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '2' && bytes[1] != '5')) {
    throw ParseError("malformed header: expected magic P2 or P5", 0);
  }
  const bool binary = bytes[1] == '5';
  rd.byte();
  rd.byte();
  const std::size_t dims_at = rd.pos();
  const auto width = rd.read_uint("width");
  const auto height = rd.read_uint("height");
  if (width == 0 || height == 0) throw ParseError("zero image dimension", dims_at);
  const std::size_t maxval_at = rd.pos();
  const auto maxval = rd.read_uint("maxval");
  if (maxval == 0 || maxval > 65535) throw ParseError("maxval out of range", maxval_at);

  const std::size_t n = width * height;
  Raster px(static_cast<Eigen::Index>(height), static_cast<Eigen::Index>(width));
  const double scale = 1.0 / static_cast<double>(maxval);
  if (binary) {
    // exactly one whitespace byte separates the header from the raster
    const std::size_t ws_at = rd.pos();
    if (rd.remaining() == 0) throw ParseError("truncated data", ws_at);
    if (!std::isspace(rd.byte())) throw ParseError("malformed header: missing raster separator", ws_at);
    const std::size_t bpp = maxval > 255 ? 2 : 1;
    if (rd.remaining() < n * bpp) {
      throw ParseError("truncated data: expected " + std::to_string(n * bpp) + " raster bytes, found " +
                           std::to_string(rd.remaining()),
                       rd.pos());
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t at = rd.pos();
      std::uint32_t v = rd.byte();
      if (bpp == 2) v = (v << 8) | rd.byte();
      if (v > maxval) throw ParseError("sample exceeds maxval", at);
      px.data()[i] = static_cast<double>(v) * scale;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      rd.skip_space_and_comments();
      const std::size_t at = rd.pos();
      if (rd.remaining() == 0) {
        throw ParseError("truncated data: expected " + std::to_string(n) + " samples, found " +
                             std::to_string(i),
                         at);
      }
      const auto v = rd.read_uint("sample");
      if (v > maxval) throw ParseError("sample exceeds maxval", at);
      px.data()[i] = static_cast<double>(v) * scale;
    }
  }
  return Image(std::move(px));
}

std::vector<std::uint8_t> save_pgm(const Image& img, bool binary) {
  std::ostringstream os;
  os << (binary ? "P5" : "P2") << '\n' << img.width() << ' ' << img.height() << "\n255\n";
  const std::string header = os.str();
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto data = img.data();
  if (binary) {
    out.reserve(out.size() + data.size());
    for (double v : data) out.push_back(static_cast<std::uint8_t>(std::round(v * 255.0)));
  } else {
    std::string body;
    for (std::size_t i = 0; i < data.size(); ++i) {
      body += std::to_string(static_cast<int>(std::round(data[i] * 255.0)));
      body += ((i + 1) % img.width() == 0) ? '\n' : ' ';
    }
    out.insert(out.end(), body.begin(), body.end());
  }
  return out;
}

Image read_pgm_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return load_pgm(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what(), e.offset());
  }
}

void write_pgm_file(const Image& img, const std::string& path, bool binary) {
  const auto bytes = save_pgm(img, binary);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::pair<Raster, Raster> sobel_components(const Raster& img) {
  if (img.rows() < 3 || img.cols() < 3) throw SizeError("sobel_gradient requires at least 3x3");
  // Differences before smoothing, so flat regions give exactly zero.
  const Eigen::Index h = img.rows();
  const Eigen::Index w = img.cols();
  auto at = [&](Eigen::Index y, Eigen::Index x) {
    return img(std::clamp<Eigen::Index>(y, 0, h - 1), std::clamp<Eigen::Index>(x, 0, w - 1));
  };
  Raster gx(h, w), gy(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      const double dx0 = at(y - 1, x + 1) - at(y - 1, x - 1);
      const double dx1 = at(y, x + 1) - at(y, x - 1);
      const double dx2 = at(y + 1, x + 1) - at(y + 1, x - 1);
      const double dy0 = at(y + 1, x - 1) - at(y - 1, x - 1);
      const double dy1 = at(y + 1, x) - at(y - 1, x);
      const double dy2 = at(y + 1, x + 1) - at(y - 1, x + 1);
      gx(y, x) = dx0 + 2.0 * dx1 + dx2;
      gy(y, x) = dy0 + 2.0 * dy1 + dy2;
    }
  }
  return {gx, gy};
}

GradientMap sobel_gradient(const Image& img) {
  const auto [gx, gy] = sobel_components(img.pixels());
  return GradientMap{(gx * gx + gy * gy).sqrt()};
}

Raster gaussian_window(int size, double sigma) {
  if (size < 3 || size % 2 == 0) throw std::invalid_argument("gaussian window size must be odd and >= 3");
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian sigma must be positive");
  const int r = size / 2;
  Raster k(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dy = y - r;
      const double dx = x - r;
      k(y, x) = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
  }
  return k / ordered_sum(k);
}

Histogram256 histogram256(const Image& img) {
  Histogram256 h;
  for (double v : img.data()) ++h.bins[static_cast<std::size_t>(intensity_bin(v))];
  h.total = img.size();
  return h;
}

Image crop(const Image& img, std::size_t y0, std::size_t x0, std::size_t size) {
  if (y0 + size > img.height() || x0 + size > img.width()) throw SizeError("crop window exceeds image");
  return Image(Raster(img.pixels().block(static_cast<Eigen::Index>(y0), static_cast<Eigen::Index>(x0),
                                         static_cast<Eigen::Index>(size), static_cast<Eigen::Index>(size))));
}

std::vector<Image> extract_patches(const Image& img, std::size_t size, std::size_t stride) {
  if (stride == 0) throw std::invalid_argument("patch stride must be >= 1");
  if (size == 0 || size > img.width() || size > img.height()) {
    throw SizeError("patch size " + std::to_string(size) + " exceeds image " + std::to_string(img.width()) +
                    "x" + std::to_string(img.height()));
  }
  std::vector<Image> out;
  for (std::size_t y = 0; y + size <= img.height(); y += stride) {
    for (std::size_t x = 0; x + size <= img.width(); x += stride) out.push_back(crop(img, y, x, size));
  }
  return out;
}

}  // namespace ivf
