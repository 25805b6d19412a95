#include "purefed/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "CLI11.hpp"
#include "purefed/rng.hpp"

namespace purefed::cli {

namespace {

// stream tags for deriving per-purpose seeds from the master seed
constexpr std::uint64_t kDataTag = 101;
constexpr std::uint64_t kPartitionTag = 102;
constexpr std::uint64_t kSelectionTag = 103;
constexpr std::uint64_t kShuffleTag = 104;
constexpr std::uint64_t kEvalTag = 105;

}  // namespace

std::uint64_t ExperimentConfig::resolved_seed_data() const {
  return seed_data ? *seed_data : rng::derive(seed, kDataTag);
}
std::uint64_t ExperimentConfig::resolved_seed_partition() const {
  return seed_partition ? *seed_partition : rng::derive(seed, kPartitionTag);
}
std::uint64_t ExperimentConfig::resolved_seed_selection() const {
  return seed_selection ? *seed_selection : rng::derive(seed, kSelectionTag);
}
std::uint64_t ExperimentConfig::resolved_seed_shuffle() const {
  return seed_shuffle ? *seed_shuffle : rng::derive(seed, kShuffleTag);
}
std::uint64_t ExperimentConfig::resolved_seed_eval() const {
  return seed_eval ? *seed_eval : rng::derive(seed, kEvalTag);
}

void ExperimentConfig::validate() const {
  fed_config().validate();
  if (classes < 2) throw ConfigError("classes: must be >= 2");
  if (dim < 2) throw ConfigError("dim: must be >= 2");
  if (n1 < 1) throw ConfigError("n1: must be >= 1");
  if (!(imbalance_factor >= 1.0)) throw ConfigError("if: must be >= 1");
  if (!(class_sep > 0.0)) throw ConfigError("class-sep: must be > 0");
  if (nu < 0.0) throw ConfigError("nu: must be >= 0");
  if (!(alpha_dir > 0.0)) throw ConfigError("alpha-dir: must be > 0");
  if (test_per_class < 1) throw ConfigError("test-per-class: must be >= 1");
  if (local_test_size < 1) throw ConfigError("local-test-size: must be >= 1");
  if (!(sigma > 0.0)) throw ConfigError("sigma: must be > 0");
  if (!(tau_min > 0.0) || !(tau_max > tau_min)) {
    throw ConfigError("tau-min/tau-max: need 0 < tau-min < tau-max");
  }
  if (!(logit_scale > 0.0)) throw ConfigError("logit-scale: must be > 0");
  if (tkl_eval_samples < 1) throw ConfigError("tkl-eval-samples: must be >= 1");
  if (out.empty()) throw ConfigError("out: must not be empty");
  const bool any_ingest =
      !ingest_embeddings.empty() || !ingest_prototypes.empty() || !ingest_test.empty();
  const bool all_ingest =
      !ingest_embeddings.empty() && !ingest_prototypes.empty() && !ingest_test.empty();
  if (any_ingest && !all_ingest) {
    throw ConfigError(
        "ingest-embeddings/ingest-prototypes/ingest-test: all three are required together");
  }
}

std::string ExperimentConfig::arm_name() const {
  if (purify && residual) return "full";
  if (purify) return "purify-only";
  if (residual) return "residual-only";
  return "fedavg-baseline";
}

federation::FedConfig ExperimentConfig::fed_config() const {
  federation::FedConfig fed;
  fed.clients = clients;
  fed.rounds = rounds;
  fed.fraction = fraction;
  fed.local_epochs = local_epochs;
  fed.batch_size = batch_size;
  fed.lr_phase1 = lr1;
  fed.lr_phase2 = lr2;
  fed.personal_rounds = personal_rounds;
  fed.lambda = lambda;
  fed.purify = purify;
  fed.residual = residual;
  fed.workers = workers;
  fed.selection_seed = resolved_seed_selection();
  fed.shuffle_seed = resolved_seed_shuffle();
  fed.bracket = bracket();
  return fed;
}

divergence::TemperatureBracket ExperimentConfig::bracket() const {
  divergence::TemperatureBracket b;
  b.tau_min = tau_min;
  b.tau_max = tau_max;
  return b;
}

void apply_arm(ExperimentConfig& cfg, const std::string& arm) {
  if (arm == "fedavg-baseline" || arm == "baseline") {
    cfg.purify = false;
    cfg.residual = false;
  } else if (arm == "purify-only") {
    cfg.purify = true;
    cfg.residual = false;
  } else if (arm == "residual-only") {
    cfg.purify = false;
    cfg.residual = true;
  } else if (arm == "full") {
    cfg.purify = true;
    cfg.residual = true;
  } else {
    throw ConfigError("arm: unknown arm '" + arm +
                      "' (expected baseline, purify-only, residual-only or full)");
  }
}

CliResult parse_cli(const std::vector<std::string>& args) {
  CliResult result;
  ExperimentConfig& cfg = result.cfg;
  std::string arm;
  std::string arms_csv;
  std::string seeds_csv;

  CLI::App app{"purefed: deterministic federated long-tailed learning simulator"};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "flat key=value config file; flags override file values");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.fallthrough();

  app.add_option("--clients", cfg.clients, "number of federated clients")
      ->check(CLI::Range(1, 1000000));
  app.add_option("--rounds", cfg.rounds, "phase-1 communication rounds")
      ->check(CLI::Range(0, 1000000));
  app.add_option("--fraction", cfg.fraction, "participating client fraction per round")
      ->check(CLI::Range(1e-9, 1.0));
  app.add_option("--local-epochs", cfg.local_epochs, "local epochs per round")
      ->check(CLI::Range(0, 1000000));
  app.add_option("--batch-size", cfg.batch_size, "local mini-batch size")
      ->check(CLI::Range(1, 1000000));
  app.add_option("--lr1", cfg.lr1, "phase-1 learning rate")->check(CLI::PositiveNumber);
  app.add_option("--lr2", cfg.lr2, "phase-2 learning rate")->check(CLI::PositiveNumber);
  app.add_option("--personal-rounds", cfg.personal_rounds, "phase-2 local passes")
      ->check(CLI::Range(0, 1000000));
  app.add_option("--lambda", cfg.lambda, "personal-loss weight")->check(CLI::Range(0.0, 1.0));
  app.add_flag("--purify,!--no-purify", cfg.purify, "gradient purification toggle");
  app.add_flag("--residual,!--no-residual", cfg.residual, "residual personalization toggle");
  app.add_option("--workers", cfg.workers, "parallel client workers (does not change results)")
      ->check(CLI::Range(1, 4096));

  app.add_option("--classes", cfg.classes, "number of classes")->check(CLI::Range(2, 1000000));
  app.add_option("--dim", cfg.dim, "feature dimension")->check(CLI::Range(2, 1000000));
  app.add_option("--n1", cfg.n1, "samples in the most frequent class")
      ->check(CLI::Range(1L, 1000000000L));
  app.add_option("--if", cfg.imbalance_factor, "imbalance factor n1/nC")
      ->check(CLI::Range(1.0, 1e12));
  app.add_option("--class-sep", cfg.class_sep, "class mean separation")
      ->check(CLI::PositiveNumber);
  app.add_option("--nu", cfg.nu, "prototype noise level")->check(CLI::NonNegativeNumber);
  app.add_option("--alpha-dir", cfg.alpha_dir, "Dirichlet heterogeneity parameter")
      ->check(CLI::PositiveNumber);
  app.add_option("--test-per-class", cfg.test_per_class, "balanced test samples per class")
      ->check(CLI::Range(1L, 1000000000L));
  app.add_option("--local-test-size", cfg.local_test_size, "local test-set size per client")
      ->check(CLI::Range(1L, 1000000000L));

  app.add_option("--sigma", cfg.sigma, "balancedness kernel scale")->check(CLI::PositiveNumber);
  app.add_option("--tau-min", cfg.tau_min, "temperature bracket lower bound")
      ->check(CLI::PositiveNumber);
  app.add_option("--tau-max", cfg.tau_max, "temperature bracket upper bound")
      ->check(CLI::PositiveNumber);
  app.add_option("--logit-scale", cfg.logit_scale, "zero-shot logit scale")
      ->check(CLI::PositiveNumber);
  app.add_option("--tkl-eval-samples", cfg.tkl_eval_samples,
                 "pinned evaluation subset size for TKL/KL trajectories")
      ->check(CLI::Range(1L, 1000000000L));

  app.add_option("--ingest-embeddings", cfg.ingest_embeddings,
                 "training embeddings CSV (label,f0,...)");
  app.add_option("--ingest-prototypes", cfg.ingest_prototypes,
                 "prototype CSV (class,f0,...)");
  app.add_option("--ingest-test", cfg.ingest_test, "balanced test embeddings CSV");

  app.add_option("--out", cfg.out, "output directory");
  app.add_option("--seed", cfg.seed, "master seed");
  app.add_option("--seed-data", cfg.seed_data, "data stream seed (defaults to derived)");
  app.add_option("--seed-partition", cfg.seed_partition, "partition stream seed");
  app.add_option("--seed-selection", cfg.seed_selection, "selection stream seed");
  app.add_option("--seed-shuffle", cfg.seed_shuffle, "batch-shuffle stream seed");
  app.add_option("--seed-eval", cfg.seed_eval, "evaluation subset stream seed");
  auto* arm_opt = app.add_option(
      "--arm", arm, "toggle preset: baseline|purify-only|residual-only|full");

  auto* suite = app.add_subcommand("suite", "run an arm x seed comparison suite");
  suite->add_option("--arms", arms_csv, "comma-separated arm names")->required();
  suite->add_option("--seeds", seeds_csv, "comma-separated master seeds")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp&) {
    result.help_requested = true;
    result.help_text = app.help();
    return result;
  } catch (const CLI::ParseError& e) {
    throw ConfigError(e.what());
  }

  if (arm_opt->count() > 0) apply_arm(cfg, arm);
  result.is_suite = suite->parsed();
  if (result.is_suite) {
    std::stringstream as(arms_csv);
    std::string tok;
    while (std::getline(as, tok, ',')) {
      if (!tok.empty()) result.arms.push_back(tok);
    }
    std::stringstream ss(seeds_csv);
    while (std::getline(ss, tok, ',')) {
      if (tok.empty()) continue;
      try {
        result.seeds.push_back(std::stoull(tok));
      } catch (const std::exception&) {
        throw ConfigError("seeds: bad seed value '" + tok + "'");
      }
    }
    if (result.arms.empty()) throw ConfigError("arms: at least one arm required");
    if (result.seeds.empty()) throw ConfigError("seeds: at least one seed required");
    for (const auto& a : result.arms) {
      ExperimentConfig probe = cfg;
      apply_arm(probe, a);  // validates the names up front
    }
  }

  cfg.validate();
  return result;
}

namespace {

std::string full_precision(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_resolved_config(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot write " + path);
  out << "clients=" << cfg.clients << "\n";
  out << "rounds=" << cfg.rounds << "\n";
  out << "fraction=" << full_precision(cfg.fraction) << "\n";
  out << "local-epochs=" << cfg.local_epochs << "\n";
  out << "batch-size=" << cfg.batch_size << "\n";
  out << "lr1=" << full_precision(cfg.lr1) << "\n";
  out << "lr2=" << full_precision(cfg.lr2) << "\n";
  out << "personal-rounds=" << cfg.personal_rounds << "\n";
  out << "lambda=" << full_precision(cfg.lambda) << "\n";
  out << "purify=" << (cfg.purify ? "true" : "false") << "\n";
  out << "residual=" << (cfg.residual ? "true" : "false") << "\n";
  out << "workers=" << cfg.workers << "\n";
  out << "classes=" << cfg.classes << "\n";
  out << "dim=" << cfg.dim << "\n";
  out << "n1=" << cfg.n1 << "\n";
  out << "if=" << full_precision(cfg.imbalance_factor) << "\n";
  out << "class-sep=" << full_precision(cfg.class_sep) << "\n";
  out << "nu=" << full_precision(cfg.nu) << "\n";
  out << "alpha-dir=" << full_precision(cfg.alpha_dir) << "\n";
  out << "test-per-class=" << cfg.test_per_class << "\n";
  out << "local-test-size=" << cfg.local_test_size << "\n";
  out << "sigma=" << full_precision(cfg.sigma) << "\n";
  out << "tau-min=" << full_precision(cfg.tau_min) << "\n";
  out << "tau-max=" << full_precision(cfg.tau_max) << "\n";
  out << "logit-scale=" << full_precision(cfg.logit_scale) << "\n";
  out << "tkl-eval-samples=" << cfg.tkl_eval_samples << "\n";
  if (!cfg.ingest_embeddings.empty()) {
    out << "ingest-embeddings=" << cfg.ingest_embeddings << "\n";
    out << "ingest-prototypes=" << cfg.ingest_prototypes << "\n";
    out << "ingest-test=" << cfg.ingest_test << "\n";
  }
  out << "out=" << cfg.out << "\n";
  out << "seed=" << cfg.seed << "\n";
  out << "seed-data=" << cfg.resolved_seed_data() << "\n";
  out << "seed-partition=" << cfg.resolved_seed_partition() << "\n";
  out << "seed-selection=" << cfg.resolved_seed_selection() << "\n";
  out << "seed-shuffle=" << cfg.resolved_seed_shuffle() << "\n";
  out << "seed-eval=" << cfg.resolved_seed_eval() << "\n";
  if (!out) throw std::runtime_error("config: write failed for " + path);
}

}  // namespace purefed::cli
