#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ivf {

enum class Modality { kIr, kVis };

/// Ordered list of image identifiers of one modality.
///
/// Two manifests with the same id describe the same base set: entry k of the
/// infrared manifest and entry k of the visible manifest are aligned captures.
struct DatasetManifest {
  std::string id;
  Modality modality = Modality::kIr;
  std::vector<std::string> entries;

  /// Throws std::invalid_argument on empty or duplicate entries.
  void validate() const;
};

std::string to_string(Modality m);
Modality parse_modality(std::string_view s);

/// Manifest text: `id=`, `modality=` header lines, then one entry per line.
std::string format_manifest(const DatasetManifest& m);
DatasetManifest parse_manifest(std::string_view text);

enum class Paradigm { kSptp, kUptp, kAptp };

std::string to_string(Paradigm p);
Paradigm parse_paradigm(std::string_view s);
/// Index constraint of a paradigm over one base set.
bool admits(Paradigm p, std::uint32_t i, std::uint32_t j);

struct IndexPair {
  std::uint32_t ir;
  std::uint32_t vis;
  friend auto operator<=>(const IndexPair&, const IndexPair&) = default;
};

struct PairingPlan {
  Paradigm paradigm = Paradigm::kSptp;
  std::string ir_manifest = "base";
  std::string vis_manifest = "base";
  std::uint64_t seed = 0;
  std::vector<IndexPair> pairs;

  bool same_base() const { return ir_manifest == vis_manifest; }
  friend bool operator==(const PairingPlan&, const PairingPlan&) = default;
};

class EmptyUniverseError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// SPTP: n, UPTP: n(n-1), APTP: n^2.
std::uint64_t universe_size(Paradigm p, std::uint64_t n);

/// Whole universe in seed-determined order.
PairingPlan enumerate_plan(Paradigm p, std::uint32_t n, std::uint64_t seed, std::string base_id = "base");

/// k pairs: without replacement when k fits the universe, otherwise whole
/// independently shuffled epochs truncated to k.
PairingPlan sample_plan(Paradigm p, std::uint32_t n, std::uint64_t k, std::uint64_t seed,
                        std::string base_id = "base");

/// Sampling over the full product of two different datasets.
PairingPlan cross_plan(const DatasetManifest& ir, const DatasetManifest& vis, std::uint64_t k, std::uint64_t seed);

struct PlanStats {
  std::uint64_t paired = 0;
  std::uint64_t unpaired = 0;
  /// "1:r" when unpaired is a multiple of paired, else "p:u".
  std::string ratio() const;
};

/// Diagonal vs off-diagonal counts. Throws std::logic_error for cross-dataset plans.
PlanStats plan_stats(const PairingPlan& plan);

/// Throws std::out_of_range if any index falls outside the manifest sizes.
void validate_plan(const PairingPlan& plan, std::size_t ir_count, std::size_t vis_count);

std::string format_plan(const PairingPlan& plan);
PairingPlan parse_plan(std::string_view text);

}  // namespace ivf
