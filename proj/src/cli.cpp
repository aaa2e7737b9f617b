#include "tornado/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>

#include "CLI11.hpp"
#include "json.hpp"
#include "tornado/analysis.hpp"
#include "tornado/config.hpp"
#include "tornado/engine.hpp"
#include "tornado/error.hpp"
#include "tornado/experiment.hpp"
#include "tornado/rng.hpp"

namespace tornado {

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

struct Options {
  std::string command;
  std::string config;
  std::string out = "out";
  std::uint64_t seed = 1;
  std::vector<std::string> sets;
  std::string arch;
  std::string preset;
  std::optional<std::size_t> nodes;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string invocation_line(const std::vector<std::string>& args) {
  std::string line = "tornado";
  for (const auto& a : args) {
    const bool quote = a.empty() || a.find_first_of(" \t'\"\\$") != std::string::npos;
    if (!quote) {
      line += " " + a;
      continue;
    }
    std::string q = "'";
    for (char c : a) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
    line += " " + q + "'";
  }
  return line + "\n";
}

ExperimentSpec load_spec(const Options& opt) {
  std::vector<std::string> head;
  if (opt.nodes) head.push_back("data.nodes=" + std::to_string(*opt.nodes));
  if (!opt.arch.empty()) head.push_back("engine.arch=" + opt.arch);

  auto parse = [&](const std::vector<std::string>& overrides) {
    return opt.config.empty() ? parse_config_text("", overrides) : parse_config(opt.config, overrides);
  };
  std::vector<std::string> overrides = head;
  overrides.insert(overrides.end(), opt.sets.begin(), opt.sets.end());
  if (opt.preset.empty()) return parse(overrides);

  // Preset keys sit between the file and --set; the group count needs the node count first.
  const ExperimentSpec base = parse(overrides);
  const Preset& preset = find_preset(opt.preset);
  const ArchitectureConfig cfg = preset_config(preset, base.data.synthetic.num_nodes);
  std::vector<std::string> with_preset = head;
  with_preset.push_back("engine.arch=" + std::string(to_string(preset.arch)));
  with_preset.push_back("engine.chains=" + std::to_string(cfg.chains));
  with_preset.push_back("engine.tau=" + std::to_string(cfg.tau));
  with_preset.push_back("engine.tau1=" + std::to_string(cfg.tau1));
  with_preset.push_back("engine.tau2=" + std::to_string(cfg.tau2));
  if (!cfg.is_flat()) {
    with_preset.push_back("grouping.scheme=" + std::string(to_string(cfg.grouping_scheme)));
    with_preset.push_back("grouping.num_groups=" + std::to_string(cfg.num_groups));
  }
  with_preset.insert(with_preset.end(), opt.sets.begin(), opt.sets.end());
  return parse(with_preset);
}

ordered_json distribution_json(const ClassDistribution& d) { return d.probs; }

ordered_json grouping_json(const ArchitectureConfig& cfg, const FederatedDataset& train, const GroupAssignment& g,
                           const std::optional<GroupingCostReport>& report) {
  ordered_json j;
  j["scheme"] = std::string(to_string(cfg.is_flat() ? GroupingScheme::SingleGroup : cfg.grouping_scheme));
  j["num_groups"] = g.num_groups();
  j["membership"] = g.membership();
  j["group_sizes"] = g.group_sizes();
  const ExampleList pooled = train.pooled();
  const ClassDistribution global = class_distribution(pooled, train.num_classes);
  ordered_json groups = ordered_json::array();
  for (const auto& members : g.members()) {
    std::vector<double> counts(train.num_classes, 0.0);
    for (std::size_t i : members) {
      const auto c = class_counts(train.nodes[i].examples, train.num_classes);
      for (std::size_t k = 0; k < counts.size(); ++k) counts[k] += c[k];
    }
    double total = 0.0;
    for (double c : counts) total += c;
    ClassDistribution dist;
    for (double c : counts) dist.probs.push_back(c / total);
    groups.push_back({{"members", members},
                      {"class_distribution", distribution_json(dist)},
                      {"emd_to_global", emd(dist, global)}});
  }
  j["groups"] = std::move(groups);
  if (report) {
    j["cost"] = {{"initial", report->initial_cost},
                 {"final", report->final_cost},
                 {"iterations", report->iterations},
                 {"reduction", report->reduction()},
                 {"trace", report->cost_trace}};
  }
  return j;
}

std::string dump(const ordered_json& j) { return j.dump(2) + "\n"; }

std::string arch_label(const ExperimentSpec& spec) {
  return spec.centralized ? "centralized" : std::string(to_string(spec.arch.architecture()));
}

int cmd_gen_data(const ExperimentSpec& spec, const Options& opt, const fs::path& dir, std::ostream& out) {
  const TrainTestSplit split = load_data(spec.data, opt.seed);
  write_dataset_csv(dir / "train.csv", split.train);
  write_dataset_csv(dir / "test.csv", split.test);
  ordered_json j;
  j["nodes"] = split.train.num_nodes();
  j["classes"] = split.train.num_classes;
  j["features"] = split.train.feature_dim;
  j["train_examples"] = split.train.node_sizes();
  j["test_examples"] = split.test.node_sizes();
  ordered_json dists = ordered_json::array();
  for (const auto& node : split.train.nodes)
    dists.push_back(distribution_json(class_distribution(node.examples, split.train.num_classes)));
  j["class_distributions"] = std::move(dists);
  write_text(dir / "dataset.json", dump(j));
  out << "gen-data: " << split.train.num_nodes() << " nodes, " << split.train.total_examples() << " train / "
      << split.test.total_examples() << " test examples -> " << dir.string() << "\n";
  return kExitOk;
}

int cmd_group(const ExperimentSpec& spec, const Options& opt, const fs::path& dir, std::ostream& out) {
  const TrainTestSplit split = load_data(spec.data, opt.seed);
  const GroupingResult g = make_grouping(spec.arch, split.train, opt.seed);
  std::optional<GroupingCostReport> report;
  if (!spec.arch.is_flat() &&
      (spec.arch.grouping_scheme == GroupingScheme::IID || spec.arch.grouping_scheme == GroupingScheme::Cluster))
    report = g.report;
  write_text(dir / "grouping.json", dump(grouping_json(spec.arch, split.train, g.assignment, report)));
  out << "group: " << g.assignment.num_groups() << " groups";
  if (report) out << ", cost " << report->initial_cost << " -> " << report->final_cost;
  out << " -> " << (dir / "grouping.json").string() << "\n";
  return kExitOk;
}

int cmd_run(const ExperimentSpec& spec, const Options& opt, const fs::path& dir, std::ostream& out) {
  const TrainTestSplit split = load_data(spec.data, opt.seed);
  RunOptions ropts;
  ropts.eval_every = spec.eval_every;

  ComparisonReport report;
  report.seed = opt.seed;
  PresetOutcome outcome;
  outcome.name = arch_label(spec);
  outcome.seed = opt.seed;
  outcome.arch = spec.centralized ? ArchitectureConfig::make(Architecture::STAR) : spec.arch;
  outcome.result = spec.centralized ? run_centralized(split.train, split.test, spec.hyper, opt.seed, ropts)
                                    : run(spec.arch, split.train, split.test, spec.hyper, opt.seed, ropts);
  const RunResult& r = outcome.result;
  report.runs.push_back(outcome);

  write_text(dir / "curves.csv", curves_csv(report));
  write_text(dir / "summary.json", summary_json(report));
  write_text(dir / "grouping.json", dump(grouping_json(outcome.arch, split.train, r.grouping, r.grouping_report)));
  write_checkpoint(dir / "checkpoint.bin", Checkpoint{r.steps_run, r.node_models});

  const EvalRecord& last = r.records.back();
  out << "run " << outcome.name << ": step " << last.step << " train_loss " << last.train_loss << " test_acc "
      << last.test_accuracy << " bytes " << last.cum_comm_bytes << "\n";
  return kExitOk;
}

int cmd_compare(const ExperimentSpec& spec, const Options& opt, const fs::path& dir, std::ostream& out) {
  const ComparisonReport report = run_comparison(spec, opt.seed);
  write_text(dir / "curves.csv", curves_csv(report));
  write_text(dir / "summary.json", summary_json(report));
  std::size_t diverged = 0;
  for (const auto& r : report.runs) diverged += r.diverged ? 1 : 0;
  out << "compare: " << report.runs.size() << " runs, " << diverged << " diverged -> " << dir.string() << "\n";
  return kExitOk;
}

int cmd_sweep(const ExperimentSpec& spec, const Options& opt, const fs::path& dir, std::ostream& out) {
  const ComparisonReport report = run_scalability_sweep(spec, spec.target_accuracy, opt.seed);
  write_text(dir / "sweep.csv", sweep_csv(report));
  write_text(dir / "summary.json", summary_json(report));
  out << "sweep: " << report.sweep.size() << " rows -> " << dir.string() << "\n";
  return kExitOk;
}

ordered_json h_json(const HBound& h) {
  ordered_json j;
  j["value"] = h.saturated ? ordered_json(nullptr) : ordered_json(h.value);
  j["saturated"] = h.saturated;
  return j;
}

int cmd_diagnose(const ExperimentSpec& spec, const Options& opt, const fs::path& dir, std::ostream& out) {
  const TrainTestSplit split = load_data(spec.data, opt.seed);
  const FederatedDataset& train = split.train;
  const ArchitectureConfig cfg = spec.centralized ? ArchitectureConfig::make(Architecture::STAR) : spec.arch;
  const GroupAssignment grouping = make_grouping(cfg, train, opt.seed).assignment;

  std::vector<ModelParams> snapshots;
  RunOptions ropts;
  ropts.eval_every = spec.eval_every;
  ropts.grouping = grouping;
  ropts.observer = [&](const StepPlan& plan, std::span<const ModelParams> models) {
    if ((plan.step + 1) % spec.eval_every == 0) snapshots.push_back(consensus_model(models, train));
  };
  const RunResult result = run(cfg, train, split.test, spec.hyper, opt.seed, ropts);

  std::vector<ModelParams> probes = random_probes(train.num_classes, train.feature_dim, spec.diagnose_probes, 0.01,
                                                  derive_seed(opt.seed, "probes"));
  probes.insert(probes.end(), snapshots.begin(), snapshots.end());
  const DivergenceEstimate div = estimate_divergences(train, grouping, probes);
  std::vector<std::pair<ModelParams, ModelParams>> pairs;
  for (std::size_t i = 0; i + 1 < probes.size(); ++i) pairs.emplace_back(probes[i], probes[i + 1]);
  for (std::size_t i = 0; i < probes.size() / 2; ++i) pairs.emplace_back(probes[i], probes[i + probes.size() / 2]);
  const SmoothnessEstimate sm = estimate_smoothness(train, pairs);

  const bool consensus = cfg.is_consensus_group();
  const std::size_t inner = consensus ? cfg.tau1 : cfg.tau;
  const std::size_t outer = consensus ? cfg.tau1 * cfg.tau2 : cfg.tau;
  const HBound h1 = h_bound(spec.hyper.eta, sm.beta_hat, inner);
  const HBound h2 = h_bound(spec.hyper.eta, sm.beta_hat, outer);
  auto term = [](double c, const HBound& h) { return c == 0.0 ? 0.0 : c * h.value; };
  const double bound = sm.rho_hat / sm.beta_hat * (term(div.delta, h1) + term(div.Delta, h2));

  ordered_json j;
  j["architecture"] = std::string(to_string(cfg.architecture()));
  j["probes"] = probes.size();
  j["delta"] = div.delta;
  j["Delta"] = div.Delta;
  j["D"] = div.D;
  j["per_node_delta"] = div.per_node_delta;
  j["per_group_Delta"] = div.per_group_Delta;
  j["per_node_D"] = div.per_node_D;
  j["beta_hat"] = sm.beta_hat;
  j["rho_hat"] = sm.rho_hat;
  j["eta"] = spec.hyper.eta;
  j["h_tau1"] = h_json(h1);
  j["h_tau1tau2"] = h_json(h2);
  j["gap_bound"] = std::isfinite(bound) ? ordered_json(bound) : ordered_json(nullptr);

  const Architecture arch = cfg.architecture();
  if (arch == Architecture::STAR || arch == Architecture::STAR_stars) {
    const VirtualTrace trace = run_virtual_trace(cfg, train, grouping, spec.hyper, opt.seed, spec.eval_every);
    const double max_gap = *std::max_element(trace.gap.begin(), trace.gap.end());
    j["virtual_trace"] = {{"interval", trace.interval},
                          {"max_gap", max_gap},
                          {"within_bound", max_gap <= bound + 1e-6}};
  }

  ordered_json series = ordered_json::array();
  for (const auto& r : result.records) series.push_back({{"step", r.step}, {"ring_variance", r.ring_variance}});
  j["variance_series"] = std::move(series);
  write_text(dir / "diagnostics.json", dump(j));

  out << "diagnose " << to_string(arch) << ": delta " << div.delta << " Delta " << div.Delta << " D " << div.D
      << " beta_hat " << sm.beta_hat << " rho_hat " << sm.rho_hat << "\n";
  return kExitOk;
}

void error_line(std::ostream& err, const std::string& kind, const std::string& message, const ordered_json& extra = {}) {
  ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  if (extra.is_object())
    for (const auto& [k, v] : extra.items()) j[k] = v;
  err << j.dump() << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options opt;
  CLI::App app{"Federated topology simulator", "tornado"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", opt.config, "Config file of key = value lines");
  app.add_option("--out", opt.out, "Output directory")->capture_default_str();
  app.add_option("--seed", opt.seed, "Master seed")->capture_default_str();
  app.add_option("--set", opt.sets, "Override KEY=VALUE (repeatable)");

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic train/test shards");
  auto* grp = app.add_subcommand("group", "Group nodes with the configured scheme");
  auto* run_cmd = app.add_subcommand("run", "Train one architecture");
  auto* cmp = app.add_subcommand("compare", "Run every preset on one dataset");
  auto* swp = app.add_subcommand("sweep", "Communication scalability sweep");
  auto* diag = app.add_subcommand("diagnose", "Divergence, smoothness and bound diagnostics");
  for (auto* sub : {gen, grp, run_cmd, cmp, swp, diag})
    sub->add_option("--nodes", opt.nodes, "Number of nodes (data.nodes)");
  for (auto* sub : {grp, run_cmd, diag}) {
    sub->add_option("--arch", opt.arch, "Architecture, e.g. STAR, RING-stars, rings, centralized");
    sub->add_option("--preset", opt.preset, "Named preset, e.g. Tornado, FedAvg");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    error_line(err, "usage", e.what());
    return kExitUsage;
  }
  opt.command = app.get_subcommands().front()->get_name();
  if (!opt.arch.empty() && !opt.preset.empty()) {
    error_line(err, "usage", "--arch and --preset are mutually exclusive");
    return kExitUsage;
  }

  try {
    const ExperimentSpec spec = load_spec(opt);
    const fs::path dir = opt.out;
    fs::create_directories(dir);
    write_text(dir / "effective_config.txt", "# seed = " + std::to_string(opt.seed) + "\n" + effective_config_text(spec));
    write_text(dir / "invocation.txt", invocation_line(args));

    if (opt.command == "gen-data") return cmd_gen_data(spec, opt, dir, out);
    if (opt.command == "group") return cmd_group(spec, opt, dir, out);
    if (opt.command == "run") return cmd_run(spec, opt, dir, out);
    if (opt.command == "compare") return cmd_compare(spec, opt, dir, out);
    if (opt.command == "sweep") return cmd_sweep(spec, opt, dir, out);
    return cmd_diagnose(spec, opt, dir, out);
  } catch (const config_error& e) {
    error_line(err, "validation", e.what(), {{"key", e.key()}});
    return kExitValidation;
  } catch (const parse_error& e) {
    error_line(err, "validation", e.what(), {{"field", e.field()}});
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    error_line(err, "validation", e.what());
    return kExitValidation;
  } catch (const diverged_error& e) {
    error_line(err, "diverged", e.what(), {{"step", e.step()}});
    return kExitRuntime;
  } catch (const std::exception& e) {
    error_line(err, "runtime", e.what());
    return kExitRuntime;
  }
}

}  // namespace tornado
