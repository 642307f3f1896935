#include "commands.hpp"

#include "ivf/config.hpp"
#include "ivf/gradcheck_suite.hpp"
#include "ivf/io.hpp"
#include "ivf/metrics.hpp"
#include "ivf/model.hpp"
#include "ivf/pairing.hpp"
#include "ivf/synth.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <optional>
#include <ostream>

namespace ivf::cli {

namespace fs = std::filesystem;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitAborted = 3;

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
};

ExperimentConfig resolve_config(const GlobalOptions& g, bool required) {
  ExperimentConfig cfg;
  if (!g.config.empty()) {
    cfg = load_config(g.config);
  } else if (required) {
    throw std::invalid_argument("--config is required for this command");
  }
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

DatasetManifest truncated(DatasetManifest m, std::uint64_t keep) {
  if (keep == 0) return m;
  if (keep > m.entries.size()) {
    throw std::invalid_argument("base_pairs=" + std::to_string(keep) + " exceeds manifest '" + m.id + "' with " +
                                std::to_string(m.entries.size()) + " entries");
  }
  m.entries.resize(keep);
  return m;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::size_t n = 32;
  std::size_t size = 64;
  std::uint64_t first_index = 0;
  bool overwrite = false;
};

int cmd_synth(const GlobalOptions& g, const SynthArgs& a, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(g, false);
  if (a.n < 1) throw std::invalid_argument("--n must be >= 1");
  if (fs::exists(a.out)) {
    if (!a.overwrite) throw std::invalid_argument("output directory exists: " + a.out + " (use --overwrite)");
  }
  const Corpus corpus = make_corpus(cfg.seed, a.n, a.size, a.first_index);
  const std::string staging = a.out + ".partial";
  fs::remove_all(staging);
  try {
    write_corpus(corpus, staging);
  } catch (...) {
    fs::remove_all(staging);
    throw;
  }
  fs::remove_all(a.out);
  fs::rename(staging, a.out);
  out << "wrote " << a.n << " scenes (" << 2 * a.n << " images, " << a.size << "x" << a.size << ") to " << a.out
      << "\nmanifest id=" << corpus.ir_manifest.id << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct PairsArgs {
  std::string out;
};

int cmd_pairs(const GlobalOptions& g, const PairsArgs& a, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(g, true);
  PairingPlan plan;
  std::uint64_t universe = 0;
  std::uint64_t base = cfg.base_pairs;

  if (!cfg.ir_manifest.empty() || !cfg.vis_manifest.empty()) {
    if (cfg.ir_manifest.empty() || cfg.vis_manifest.empty()) {
      throw std::invalid_argument("set both ir_manifest and vis_manifest, or neither");
    }
    const auto ir = truncated(parse_manifest(read_file_text(cfg.ir_manifest)), cfg.base_pairs);
    const auto vis = truncated(parse_manifest(read_file_text(cfg.vis_manifest)), cfg.base_pairs);
    if (ir.id == vis.id) {
      if (ir.entries.size() != vis.entries.size()) throw std::invalid_argument("aligned manifests differ in length");
      base = ir.entries.size();
      universe = universe_size(cfg.paradigm, base);
      plan = sample_plan(cfg.paradigm, static_cast<std::uint32_t>(base), cfg.trainable_pairs ? cfg.trainable_pairs : universe,
                         cfg.seed, ir.id);
    } else {
      universe = ir.entries.size() * vis.entries.size();
      plan = cross_plan(ir, vis, cfg.trainable_pairs ? cfg.trainable_pairs : universe, cfg.seed);
    }
  } else {
    if (base == 0) throw std::invalid_argument("base_pairs must be set when no manifests are given");
    universe = universe_size(cfg.paradigm, base);
    plan = sample_plan(cfg.paradigm, static_cast<std::uint32_t>(base), cfg.trainable_pairs ? cfg.trainable_pairs : universe,
                       cfg.seed);
  }

  out << "paradigm=" << (plan.same_base() ? to_string(plan.paradigm) : std::string("cross")) << "\n";
  if (plan.same_base()) out << "base_pairs=" << base << "\n";
  out << "universe=" << universe << "\ncount=" << plan.pairs.size() << "\n";
  if (plan.same_base()) {
    const auto s = plan_stats(plan);
    out << "paired=" << s.paired << " unpaired=" << s.unpaired << " ratio=" << s.ratio() << "\n";
  }
  if (!a.out.empty()) write_file_atomic(a.out, format_plan(plan));
  return 0;
}

// ---------------------------------------------------------------------------

std::vector<ImagePair> load_eval_pairs(const std::string& ir_path, const std::string& vis_path) {
  auto [irm, irs] = load_manifest_images(ir_path);
  auto [vism, viss] = load_manifest_images(vis_path);
  if (irm.id != vism.id || irs.size() != viss.size()) {
    throw std::invalid_argument("evaluation manifests must describe one aligned set");
  }
  std::vector<ImagePair> pairs;
  for (std::size_t k = 0; k < irs.size(); ++k) pairs.push_back({irm.entries[k], std::move(irs[k]), std::move(viss[k])});
  return pairs;
}

struct TrainArgs {
  std::string plan;
  std::string out;
  std::string resume;
  std::optional<std::uint64_t> iterations;
};

int cmd_train(const GlobalOptions& g, const TrainArgs& a, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = resolve_config(g, true);
  if (a.iterations) cfg.iterations = *a.iterations;
  if (cfg.ir_manifest.empty() || cfg.vis_manifest.empty()) {
    throw std::invalid_argument("config must set ir_manifest and vis_manifest");
  }
  const TrainConfig tc = cfg.train_config(g.threads);
  tc.validate();
  const PairingPlan plan = parse_plan(read_file_text(a.plan));
  auto [irm, irs] = load_manifest_images(cfg.ir_manifest);
  auto [vism, viss] = load_manifest_images(cfg.vis_manifest);
  if (plan.ir_manifest != irm.id || plan.vis_manifest != vism.id) {
    throw std::invalid_argument("plan was generated for manifests " + plan.ir_manifest + "/" + plan.vis_manifest +
                                ", config supplies " + irm.id + "/" + vism.id);
  }
  std::vector<ImagePair> eval;
  if (!cfg.eval_ir_manifest.empty() && !cfg.eval_vis_manifest.empty()) {
    eval = load_eval_pairs(cfg.eval_ir_manifest, cfg.eval_vis_manifest);
  }

  TrainState state = a.resume.empty() ? TrainState{init_model(cfg.seed), {}} : load_checkpoint(a.resume);
  TrainRecord rec;
  try {
    rec = train(tc, plan, irs, viss, eval, state);
  } catch (const TrainingAborted& e) {
    err << "error: " << e.what() << "\n";
    return kExitAborted;
  }

  fs::create_directories(a.out);
  save_checkpoint(state, (fs::path(a.out) / "model.ivck").string());
  write_file_atomic((fs::path(a.out) / "loss.csv").string(), format_loss_csv(rec));
  write_file_atomic((fs::path(a.out) / "eval.csv").string(), format_eval_csv(rec));
  out << "trained to iteration " << state.adam.step << " (" << rec.losses.size() << " steps this run)\n";
  if (!rec.losses.empty()) out << "final smoothed total loss " << format_double(smoothed_tail(rec, 50)) << "\n";
  if (!rec.evals.empty()) out << "final eval ssim_mean " << format_double(rec.evals.back().metrics.ssim_mean) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct FuseArgs {
  std::string checkpoint;
  std::string ir;
  std::string vis;
  std::string out;
};

int cmd_fuse(const FuseArgs& a, std::ostream& out) {
  const TrainState state = load_checkpoint(a.checkpoint);
  const Image ir = read_pgm_file(a.ir);
  const Image vis = read_pgm_file(a.vis);
  if (ir.width() != vis.width() || ir.height() != vis.height()) {
    throw std::invalid_argument("source images differ in shape");
  }
  write_file_atomic(a.out, save_pgm(fuse(state.params, ir, vis)));
  out << "wrote " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string ir_manifest;
  std::string vis_manifest;
  std::string out;
};

int cmd_eval(const GlobalOptions& g, const EvalArgs& a, std::ostream& out) {
  const ExperimentConfig cfg = resolve_config(g, false);
  const std::string ir = !a.ir_manifest.empty() ? a.ir_manifest : cfg.eval_ir_manifest;
  const std::string vis = !a.vis_manifest.empty() ? a.vis_manifest : cfg.eval_vis_manifest;
  if (ir.empty() || vis.empty()) throw std::invalid_argument("evaluation manifests are required");
  const TrainState state = load_checkpoint(a.checkpoint);
  const auto pairs = load_eval_pairs(ir, vis);
  LossConfig lc = cfg.train_config().loss;
  const std::string csv = format_metric_csv(evaluate_set(state.params, pairs, lc, g.threads));
  if (a.out.empty()) {
    out << csv;
  } else {
    write_file_atomic(a.out, csv);
    out << "wrote " << a.out << " (" << pairs.size() << " pairs)\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_gradcheck(const GlobalOptions& g, bool inject_fault, std::ostream& out) {
  GradCheckSuiteOptions opts;
  if (g.seed) opts.seed = *g.seed;
  opts.inject_conv_fault = inject_fault;
  const auto reports = run_gradcheck_suite(opts);
  out << format_gradcheck_table(reports);
  const bool ok = std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.passed; });
  out << (ok ? "all checks passed\n" : "gradient check FAILED\n");
  return ok ? 0 : kExitFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Infrared/visible fusion training lab", "ivfuse"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions global;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Seed overriding the config value");
  app.add_option("--config", global.config, "Experiment config file (key=value)");
  app.add_option("--threads", global.threads, "Worker threads for batch and evaluation")->check(CLI::PositiveNumber);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic paired corpus");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--n", synth.n, "Number of scenes")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--size", synth.size, "Image side in pixels")->check(CLI::Range(16, 4096));
  synth_cmd->add_option("--first-index", synth.first_index, "Index of the first scene");
  synth_cmd->add_flag("--overwrite", synth.overwrite, "Replace an existing output directory");

  PairsArgs pairs;
  auto* pairs_cmd = app.add_subcommand("pairs", "Generate a pairing plan");
  pairs_cmd->add_option("--out", pairs.out, "Plan file to write");

  TrainArgs train_args;
  std::uint64_t iterations = 0;
  auto* train_cmd = app.add_subcommand("train", "Train the fusion model on a plan");
  train_cmd->add_option("--plan", train_args.plan, "Plan file")->required();
  train_cmd->add_option("--out", train_args.out, "Output directory")->required();
  train_cmd->add_option("--resume", train_args.resume, "Checkpoint to resume from");
  auto* iter_opt = train_cmd->add_option("--iterations", iterations, "Override the configured iteration count");

  FuseArgs fuse_args;
  auto* fuse_cmd = app.add_subcommand("fuse", "Fuse one image pair");
  fuse_cmd->add_option("--checkpoint", fuse_args.checkpoint, "Model checkpoint")->required();
  fuse_cmd->add_option("--ir", fuse_args.ir, "Infrared PGM")->required();
  fuse_cmd->add_option("--vis", fuse_args.vis, "Visible PGM")->required();
  fuse_cmd->add_option("--out", fuse_args.out, "Fused PGM to write")->required();

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on aligned test pairs");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Model checkpoint")->required();
  eval_cmd->add_option("--ir-manifest", eval_args.ir_manifest, "Infrared test manifest");
  eval_cmd->add_option("--vis-manifest", eval_args.vis_manifest, "Visible test manifest");
  eval_cmd->add_option("--out", eval_args.out, "Metrics CSV (stdout if omitted)");

  bool inject_fault = false;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Verify analytic gradients against finite differences");
  grad_cmd->add_flag("--inject-fault", inject_fault, "Corrupt the conv2d backward (harness self-test)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  if (*seed_opt) global.seed = seed_value;
  if (*iter_opt) train_args.iterations = iterations;

  try {
    if (*synth_cmd) return cmd_synth(global, synth, out);
    if (*pairs_cmd) return cmd_pairs(global, pairs, out);
    if (*train_cmd) return cmd_train(global, train_args, out, err);
    if (*fuse_cmd) return cmd_fuse(fuse_args, out);
    if (*eval_cmd) return cmd_eval(global, eval_args, out);
    if (*grad_cmd) return cmd_gradcheck(global, inject_fault, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace ivf::cli
