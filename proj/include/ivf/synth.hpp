#pragma once

#include "ivf/image.hpp"
#include "ivf/metrics.hpp"
#include "ivf/pairing.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ivf {

/// One scene rendered in both modalities from shared geometry. The infrared
/// rendering carries bright blob targets on a smooth background; the visible
/// rendering carries high-frequency texture and strong structure edges with
/// dim targets. Pixels are quantized to k / 255.
struct SceneRender {
  Image ir;
  Image vis;
};

SceneRender render_scene(std::uint64_t seed, std::uint64_t index, std::size_t size);

/// Mean squared Sobel magnitude.
double sobel_energy(const Image& img);

struct Corpus {
  DatasetManifest ir_manifest;
  DatasetManifest vis_manifest;
  std::vector<Image> ir;
  std::vector<Image> vis;

  /// Aligned pairs (entry k of both modalities), for evaluation.
  std::vector<ImagePair> aligned_pairs() const;
};

/// In-memory corpus of scenes first_index .. first_index + n - 1.
Corpus make_corpus(std::uint64_t seed, std::size_t n, std::size_t size, std::uint64_t first_index = 0);

/// Writes ir/NNNNN.pgm, vis/NNNNN.pgm, ir.manifest and vis.manifest under dir.
void write_corpus(const Corpus& corpus, const std::string& dir);

/// Loads a manifest and the PGM files it lists (paths relative to the manifest).
std::pair<DatasetManifest, std::vector<Image>> load_manifest_images(const std::string& manifest_path);

}  // namespace ivf
