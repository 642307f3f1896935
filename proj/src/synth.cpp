#include "ivf/synth.hpp"

#include "ivf/io.hpp"
#include "ivf/rng.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

namespace ivf {

namespace {

struct Target {
  double cy, cx, radius, heat;
};

struct Block {
  double y0, x0, y1, x1, shade;
};

struct Grating {
  double fy, fx, phase, amplitude;
};

Raster quantize(const Raster& r) {
  return (r.max(0.0).min(1.0) * 255.0).round() / 255.0;
}

}  // namespace

SceneRender render_scene(std::uint64_t seed, std::uint64_t index, std::size_t size) {
  if (size < 16) throw std::invalid_argument("scene size must be >= 16");
  Rng rng(seed, "synth", index);
  const double s = static_cast<double>(size);

  std::vector<Target> targets(2 + rng.below(3));
  for (auto& t : targets) {
    t.radius = rng.uniform(s / 16.0, s / 7.0);
    t.cy = rng.uniform(t.radius, s - t.radius);
    t.cx = rng.uniform(t.radius, s - t.radius);
    t.heat = rng.uniform(0.5, 0.75);
  }
  std::vector<Block> blocks(2 + rng.below(3));
  for (auto& b : blocks) {
    b.y0 = rng.uniform(0.0, 0.7 * s);
    b.x0 = rng.uniform(0.0, 0.7 * s);
    b.y1 = b.y0 + rng.uniform(0.15 * s, 0.45 * s);
    b.x1 = b.x0 + rng.uniform(0.15 * s, 0.45 * s);
    b.shade = rng.uniform(-0.25, 0.25);
  }
  std::vector<Grating> gratings(3);
  for (auto& g : gratings) {
    const double freq = rng.uniform(0.25, 0.6) * std::numbers::pi;
    const double angle = rng.uniform(0.0, std::numbers::pi);
    g.fy = freq * std::sin(angle);
    g.fx = freq * std::cos(angle);
    g.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    g.amplitude = rng.uniform(0.04, 0.08);
  }
  const double ir_base = rng.uniform(0.12, 0.25);
  const double ir_tilt = rng.uniform(-0.08, 0.08);
  const double vis_base = rng.uniform(0.4, 0.55);

  const auto n = static_cast<Eigen::Index>(size);
  Raster ir(n, n);
  Raster vis(n, n);
  for (Eigen::Index y = 0; y < n; ++y) {
    for (Eigen::Index x = 0; x < n; ++x) {
      const double py = static_cast<double>(y) + 0.5;
      const double px = static_cast<double>(x) + 0.5;
      double heat = 0.0;
      for (const auto& t : targets) {
        const double d2 = ((py - t.cy) * (py - t.cy) + (px - t.cx) * (px - t.cx)) / (t.radius * t.radius);
        heat += t.heat * std::exp(-1.5 * d2);
      }
      double structure = 0.0;
      for (const auto& b : blocks) {
        if (py >= b.y0 && py < b.y1 && px >= b.x0 && px < b.x1) structure += b.shade;
      }
      double texture = 0.0;
      for (const auto& g : gratings) texture += g.amplitude * std::sin(g.fy * py + g.fx * px + g.phase);
      texture += 0.03 * (rng.uniform() - 0.5);

      ir(y, x) = ir_base + ir_tilt * (py / s - 0.5) + 0.2 * structure + heat;
      vis(y, x) = vis_base + structure + texture + 0.12 * heat;
    }
  }
  return {Image(quantize(ir)), Image(quantize(vis))};
}

double sobel_energy(const Image& img) {
  const auto g = sobel_gradient(img);
  return ordered_mean(Raster(g.values.square()));
}

std::vector<ImagePair> Corpus::aligned_pairs() const {
  std::vector<ImagePair> out;
  for (std::size_t k = 0; k < ir.size() && k < vis.size(); ++k) {
    out.push_back({ir_manifest.entries[k], ir[k], vis[k]});
  }
  return out;
}

Corpus make_corpus(std::uint64_t seed, std::size_t n, std::size_t size, std::uint64_t first_index) {
  if (n == 0) throw std::invalid_argument("corpus needs at least one scene");
  Corpus c;
  const std::string id = "synth-s" + std::to_string(seed) + "-i" + std::to_string(first_index) + "-n" +
                         std::to_string(n) + "-z" + std::to_string(size);
  c.ir_manifest = {id, Modality::kIr, {}};
  c.vis_manifest = {id, Modality::kVis, {}};
  for (std::size_t k = 0; k < n; ++k) {
    auto scene = render_scene(seed, first_index + k, size);
    char name[32];
    std::snprintf(name, sizeof(name), "%05zu.pgm", k);
    c.ir_manifest.entries.push_back(std::string("ir/") + name);
    c.vis_manifest.entries.push_back(std::string("vis/") + name);
    c.ir.push_back(std::move(scene.ir));
    c.vis.push_back(std::move(scene.vis));
  }
  return c;
}

void write_corpus(const Corpus& corpus, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "ir");
  fs::create_directories(fs::path(dir) / "vis");
  for (std::size_t k = 0; k < corpus.ir.size(); ++k) {
    write_file_atomic((fs::path(dir) / corpus.ir_manifest.entries[k]).string(), save_pgm(corpus.ir[k]));
    write_file_atomic((fs::path(dir) / corpus.vis_manifest.entries[k]).string(), save_pgm(corpus.vis[k]));
  }
  write_file_atomic((fs::path(dir) / "ir.manifest").string(), format_manifest(corpus.ir_manifest));
  write_file_atomic((fs::path(dir) / "vis.manifest").string(), format_manifest(corpus.vis_manifest));
}

std::pair<DatasetManifest, std::vector<Image>> load_manifest_images(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  DatasetManifest m = parse_manifest(read_file_text(manifest_path));
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<Image> images;
  images.reserve(m.entries.size());
  for (const auto& e : m.entries) images.push_back(read_pgm_file((base / e).string()));
  return {std::move(m), std::move(images)};
}

}  // namespace ivf
