#include "ivf/pairing.hpp"

#include "ivf/rng.hpp"

#include <charconv>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ivf {

namespace {

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> out;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    out.push_back(line);
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
  return out;
}

template <typename T>
T parse_uint(std::string_view s, const char* what) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument(std::string("invalid ") + what + ": '" + std::string(s) + "'");
  }
  return v;
}

std::vector<IndexPair> universe(Paradigm p, std::uint32_t n) {
  universe_size(p, n);
  std::vector<IndexPair> u;
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < n; ++j) {
      if (admits(p, i, j)) u.push_back({i, j});
    }
  }
  return u;
}

// Partial Fisher-Yates over the universe, repeated in whole epochs when k
// exceeds it. One stream serves every epoch.
std::vector<IndexPair> draw(std::vector<IndexPair> u, std::uint64_t k, Rng& rng) {
  std::vector<IndexPair> out;
  out.reserve(k);
  const std::uint64_t n = u.size();
  while (out.size() < k) {
    const std::uint64_t take = std::min<std::uint64_t>(n, k - out.size());
    for (std::uint64_t i = 0; i < take; ++i) {
      const std::uint64_t j = i + rng.below(n - i);
      std::swap(u[i], u[j]);
      out.push_back(u[i]);
    }
  }
  return out;
}

}  // namespace

void DatasetManifest::validate() const {
  if (entries.empty()) throw std::invalid_argument("manifest '" + id + "' has no entries");
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e).second) throw std::invalid_argument("manifest '" + id + "' repeats entry '" + e + "'");
  }
}

std::string to_string(Modality m) { return m == Modality::kIr ? "ir" : "vis"; }

Modality parse_modality(std::string_view s) {
  if (s == "ir") return Modality::kIr;
  if (s == "vis") return Modality::kVis;
  throw std::invalid_argument("unknown modality '" + std::string(s) + "'");
}

std::string format_manifest(const DatasetManifest& m) {
  std::string out = "id=" + m.id + "\nmodality=" + to_string(m.modality) + "\n";
  for (const auto& e : m.entries) out += e + "\n";
  return out;
}

DatasetManifest parse_manifest(std::string_view text) {
  DatasetManifest m;
  bool have_id = false;
  bool have_modality = false;
  for (auto line : split_lines(text)) {
    if (line.empty()) continue;
    if (!have_id && line.starts_with("id=")) {
      m.id = std::string(line.substr(3));
      have_id = true;
    } else if (!have_modality && line.starts_with("modality=")) {
      m.modality = parse_modality(line.substr(9));
      have_modality = true;
    } else {
      m.entries.emplace_back(line);
    }
  }
  if (!have_id || !have_modality) throw std::invalid_argument("manifest missing id= or modality= header");
  m.validate();
  return m;
}

std::string to_string(Paradigm p) {
  switch (p) {
    case Paradigm::kSptp: return "sptp";
    case Paradigm::kUptp: return "uptp";
    case Paradigm::kAptp: return "aptp";
  }
  return "?";
}

Paradigm parse_paradigm(std::string_view s) {
  if (s == "sptp" || s == "SPTP") return Paradigm::kSptp;
  if (s == "uptp" || s == "UPTP") return Paradigm::kUptp;
  if (s == "aptp" || s == "APTP") return Paradigm::kAptp;
  throw std::invalid_argument("unknown paradigm '" + std::string(s) + "' (expected sptp, uptp or aptp)");
}

bool admits(Paradigm p, std::uint32_t i, std::uint32_t j) {
  switch (p) {
    case Paradigm::kSptp: return i == j;
    case Paradigm::kUptp: return i != j;
    case Paradigm::kAptp: return true;
  }
  return false;
}

std::uint64_t universe_size(Paradigm p, std::uint64_t n) {
  if (n == 0) throw EmptyUniverseError("base set is empty");
  switch (p) {
    case Paradigm::kSptp: return n;
    case Paradigm::kUptp:
      if (n < 2) throw EmptyUniverseError("UPTP needs at least 2 base pairs");
      return n * (n - 1);
    case Paradigm::kAptp: return n * n;
  }
  return 0;
}

PairingPlan enumerate_plan(Paradigm p, std::uint32_t n, std::uint64_t seed, std::string base_id) {
  return sample_plan(p, n, universe_size(p, n), seed, std::move(base_id));
}

PairingPlan sample_plan(Paradigm p, std::uint32_t n, std::uint64_t k, std::uint64_t seed, std::string base_id) {
  if (k == 0) throw std::invalid_argument("requested pair count must be >= 1");
  Rng rng(seed, "pairing");
  PairingPlan plan{.paradigm = p, .ir_manifest = base_id, .vis_manifest = base_id, .seed = seed};
  plan.pairs = draw(universe(p, n), k, rng);
  return plan;
}

PairingPlan cross_plan(const DatasetManifest& ir, const DatasetManifest& vis, std::uint64_t k, std::uint64_t seed) {
  ir.validate();
  vis.validate();
  if (k == 0) throw std::invalid_argument("requested pair count must be >= 1");
  std::vector<IndexPair> u;
  u.reserve(ir.entries.size() * vis.entries.size());
  for (std::uint32_t i = 0; i < ir.entries.size(); ++i) {
    for (std::uint32_t j = 0; j < vis.entries.size(); ++j) u.push_back({i, j});
  }
  Rng rng(seed, "pairing");
  PairingPlan plan{.paradigm = Paradigm::kAptp, .ir_manifest = ir.id, .vis_manifest = vis.id, .seed = seed};
  plan.pairs = draw(std::move(u), k, rng);
  return plan;
}

std::string PlanStats::ratio() const {
  if (paired > 0 && unpaired % paired == 0) return "1:" + std::to_string(unpaired / paired);
  return std::to_string(paired) + ":" + std::to_string(unpaired);
}

PlanStats plan_stats(const PairingPlan& plan) {
  if (!plan.same_base()) {
    throw std::logic_error("paired/unpaired ratio is undefined for cross-dataset plans (" + plan.ir_manifest +
                           " x " + plan.vis_manifest + ")");
  }
  PlanStats s;
  for (const auto& pr : plan.pairs) (pr.ir == pr.vis ? s.paired : s.unpaired)++;
  return s;
}

void validate_plan(const PairingPlan& plan, std::size_t ir_count, std::size_t vis_count) {
  for (std::size_t k = 0; k < plan.pairs.size(); ++k) {
    const auto& pr = plan.pairs[k];
    if (pr.ir >= ir_count || pr.vis >= vis_count) {
      throw std::out_of_range("plan pair " + std::to_string(k) + " (" + std::to_string(pr.ir) + "," +
                              std::to_string(pr.vis) + ") outside manifests of size " + std::to_string(ir_count) +
                              "/" + std::to_string(vis_count));
    }
    if (plan.same_base() && !admits(plan.paradigm, pr.ir, pr.vis)) {
      throw std::invalid_argument("plan pair " + std::to_string(k) + " violates the " + to_string(plan.paradigm) +
                                  " index constraint");
    }
  }
}

std::string format_plan(const PairingPlan& plan) {
  std::ostringstream os;
  os << "paradigm=" << to_string(plan.paradigm) << '\n'
     << "ir=" << plan.ir_manifest << '\n'
     << "vis=" << plan.vis_manifest << '\n'
     << "seed=" << plan.seed << '\n'
     << "prng=" << kPrngName << '\n'
     << "count=" << plan.pairs.size() << '\n';
  for (const auto& pr : plan.pairs) os << pr.ir << ',' << pr.vis << '\n';
  return os.str();
}

PairingPlan parse_plan(std::string_view text) {
  const auto lines = split_lines(text);
  const char* keys[] = {"paradigm=", "ir=", "vis=", "seed=", "prng=", "count="};
  if (lines.size() < 6) throw std::invalid_argument("plan file: truncated header");
  std::string_view vals[6];
  for (int k = 0; k < 6; ++k) {
    if (!lines[k].starts_with(keys[k])) {
      throw std::invalid_argument("plan file line " + std::to_string(k + 1) + ": expected '" + keys[k] + "'");
    }
    vals[k] = lines[k].substr(std::string_view(keys[k]).size());
  }
  if (vals[4] != kPrngName) {
    throw std::invalid_argument("plan file generated with unsupported prng '" + std::string(vals[4]) + "'");
  }
  PairingPlan plan;
  plan.paradigm = parse_paradigm(vals[0]);
  plan.ir_manifest = std::string(vals[1]);
  plan.vis_manifest = std::string(vals[2]);
  plan.seed = parse_uint<std::uint64_t>(vals[3], "seed");
  const auto count = parse_uint<std::uint64_t>(vals[5], "count");
  for (std::size_t k = 6; k < lines.size(); ++k) {
    const auto line = lines[k];
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string_view::npos) throw std::invalid_argument("plan file line " + std::to_string(k + 1) + ": expected i,j");
    plan.pairs.push_back({parse_uint<std::uint32_t>(line.substr(0, comma), "index"),
                          parse_uint<std::uint32_t>(line.substr(comma + 1), "index")});
  }
  if (plan.pairs.size() != count) {
    throw std::invalid_argument("plan file declares " + std::to_string(count) + " pairs but lists " +
                                std::to_string(plan.pairs.size()));
  }
  if (plan.same_base()) {
    for (std::size_t k = 0; k < plan.pairs.size(); ++k) {
      if (!admits(plan.paradigm, plan.pairs[k].ir, plan.pairs[k].vis)) {
        throw std::invalid_argument("plan pair " + std::to_string(k) + " violates the " + to_string(plan.paradigm) +
                                    " index constraint");
      }
    }
  }
  return plan;
}

}  // namespace ivf
