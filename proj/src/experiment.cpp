#include "tornado/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "tornado/error.hpp"
#include "tornado/rng.hpp"

namespace tornado {

const std::vector<Preset>& standard_presets() {
  using A = Architecture;
  using S = GroupingScheme;
  static const std::vector<Preset> presets = {
      {"FedAvg", A::STAR, S::SingleGroup, 0, 1, 10, 10, 100},
      {"HierFAVG", A::STAR_stars, S::Random, 5, 1, 10, 10, 100},
      {"Astraea", A::STAR_rings, S::IID, 2, 1, 10, 10, 100},
      {"MM-PSGD", A::RING_stars, S::Cluster, 10, 1, 10, 10, 100},
      {"Tornado", A::RING_stars, S::IID, 2, 2, 10, 10, 100},
      {"Tornadoes", A::STAR_rings, S::Cluster, 10, 10, 10, 10, 100},
      {"IFCA", A::stars, S::Cluster, 10, 1, 10, 10, 100},
      {"SemiCyclic", A::rings, S::Random, 5, 1, 10, 10, 100},
      {"Tornado-rings", A::rings, S::Cluster, 10, 10, 10, 10, 100},
  };
  return presets;
}

const Preset& find_preset(const std::string& name) {
  for (const auto& p : standard_presets())
    if (p.name == name) return p;
  throw std::invalid_argument("unknown preset '" + name + "'");
}

ArchitectureConfig preset_config(const Preset& preset, std::size_t num_nodes, std::optional<std::size_t> num_groups) {
  ArchitectureConfig cfg = ArchitectureConfig::make(preset.arch);
  cfg.chains = preset.chains;
  cfg.tau1 = preset.tau1;
  cfg.tau2 = preset.tau2;
  cfg.tau = preset.tau;
  if (!cfg.is_flat()) {
    cfg.grouping_scheme = preset.scheme;
    cfg.num_groups = num_groups ? *num_groups : groups_for_size(num_nodes, preset.group_size);
  }
  // Small node counts cannot host every chain.
  if (cfg.architecture() == Architecture::RING) cfg.chains = std::min(cfg.chains, num_nodes);
  if (cfg.group_level == GroupLevel::Ring && cfg.global_level != GlobalLevel::Ring && num_nodes >= cfg.num_groups)
    cfg.chains = std::min(cfg.chains, num_nodes - cfg.num_groups + 1);
  if (cfg.global_level == GlobalLevel::Ring && !cfg.is_flat()) cfg.chains = std::min(cfg.chains, cfg.num_groups);
  return cfg;
}

TrainTestSplit load_data(const DataSpec& spec, std::uint64_t seed, std::optional<std::size_t> num_nodes) {
  const std::uint64_t data_seed = derive_seed(seed, "data");
  switch (spec.source) {
    case DataSource::Synthetic: {
      SyntheticSpec s = spec.synthetic;
      if (num_nodes) s.num_nodes = *num_nodes;
      return generate_synthetic_split(s, data_seed);
    }
    case DataSource::Csv: {
      if (num_nodes) throw std::invalid_argument("csv datasets have a fixed node count");
      TrainTestSplit split{read_dataset_csv(spec.train_csv), read_dataset_csv(spec.test_csv)};
      split.train.validate();
      return split;
    }
    case DataSource::Idx: {
      const std::size_t n = num_nodes ? *num_nodes : spec.synthetic.num_nodes;
      ExampleList train_pool = load_idx(spec.idx_train_images, spec.idx_train_labels);
      ExampleList test_pool = load_idx(spec.idx_test_images, spec.idx_test_labels);
      std::size_t k = 0;
      for (const auto& ex : train_pool) k = std::max(k, ex.label + 1);
      for (const auto& ex : test_pool) k = std::max(k, ex.label + 1);
      TrainTestSplit split{partition_by_shards(std::move(train_pool), n, spec.shards_per_node, data_seed, k),
                           partition_by_shards(std::move(test_pool), n, spec.shards_per_node, data_seed, k)};
      split.train.validate();
      return split;
    }
  }
  throw std::invalid_argument("unknown data source");
}

ArchitectureConfig ExperimentSpec::default_arch() {
  ArchitectureConfig cfg = ArchitectureConfig::make(Architecture::RING_stars);
  cfg.grouping_scheme = GroupingScheme::IID;
  cfg.num_groups = 2;
  return cfg;
}

std::vector<std::string> ExperimentSpec::default_presets() {
  std::vector<std::string> names;
  for (const auto& p : standard_presets()) names.push_back(p.name);
  return names;
}

void ExperimentSpec::validate() const {
  hyper.validate();
  if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
  if (data.source == DataSource::Synthetic) data.synthetic.validate();
  if (!centralized) {
    if (data.source == DataSource::Csv)
      arch.validate();
    else
      arch.validate(data.synthetic.num_nodes);
  }
  for (std::size_t i = 0; i < presets.size(); ++i) {
    find_preset(presets[i]);
    for (std::size_t j = 0; j < i; ++j)
      if (presets[i] == presets[j]) throw std::invalid_argument("duplicate preset '" + presets[i] + "'");
  }
  if (sweep_nodes.empty()) throw std::invalid_argument("sweep list is empty");
  for (std::size_t i = 1; i < sweep_nodes.size(); ++i)
    if (sweep_nodes[i] <= sweep_nodes[i - 1]) throw std::invalid_argument("sweep list must be strictly increasing");
  if (sweep_nodes.front() < 1) throw std::invalid_argument("sweep node counts must be >= 1");
  for (const auto& name : sweep_presets) find_preset(name);
  if (seeds < 1) throw std::invalid_argument("seeds must be >= 1");
  if (target_accuracy < 0.0 || target_accuracy > 1.0) throw std::invalid_argument("target accuracy must be in [0, 1]");
  if (step_cap < 1) throw std::invalid_argument("step cap must be >= 1");
}

namespace {

// Runs job(i) for i in [0, count) on up to `threads` workers. Each job writes
// only its own slot, so the outcome does not depend on scheduling.
template <class Job>
void parallel_for(std::size_t count, std::size_t threads, Job job) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

ComparisonReport run_comparison(const ExperimentSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::vector<std::string> names = spec.presets.empty() ? ExperimentSpec::default_presets() : spec.presets;

  std::vector<TrainTestSplit> data;
  for (std::size_t s = 0; s < spec.seeds; ++s) data.push_back(load_data(spec.data, seed + s));

  ComparisonReport report;
  report.seed = seed;
  report.runs.resize(spec.seeds * names.size());
  parallel_for(report.runs.size(), spec.threads, [&](std::size_t job) {
    const std::size_t s = job / names.size();
    const Preset& preset = find_preset(names[job % names.size()]);
    const TrainTestSplit& split = data[s];
    PresetOutcome& out = report.runs[job];
    out.name = preset.name;
    out.seed = seed + s;
    out.arch = preset_config(preset, split.train.num_nodes());
    RunOptions opts;
    opts.eval_every = spec.eval_every;
    try {
      out.result = run(out.arch, split.train, split.test, spec.hyper, out.seed, opts);
    } catch (const diverged_error& e) {
      out.diverged = true;
      out.error = e.what();
    }
  });
  return report;
}

ComparisonReport run_scalability_sweep(const ExperimentSpec& spec, double target_accuracy, std::uint64_t seed) {
  spec.validate();
  ComparisonReport report;
  report.seed = seed;
  const std::size_t smallest = spec.sweep_nodes.front();
  const std::size_t count = spec.sweep_nodes.size();

  Hyperparams hyper = spec.hyper;
  hyper.steps = spec.step_cap;

  for (const auto& name : spec.sweep_presets) {
    const Preset& preset = find_preset(name);
    const std::optional<std::size_t> groups =
        preset.group_size == 0 ? std::nullopt : std::optional<std::size_t>(groups_for_size(smallest, preset.group_size));

    std::vector<SweepRow> rows(count);
    std::vector<TrainTestSplit> data(count);
    std::vector<ArchitectureConfig> cfgs(count);
    for (std::size_t j = 0; j < count; ++j) {
      data[j] = load_data(spec.data, seed, spec.sweep_nodes[j]);
      cfgs[j] = preset_config(preset, spec.sweep_nodes[j], groups);
    }

    double target = target_accuracy;
    if (!(target > 0.0)) {
      RunOptions opts;
      opts.eval_every = spec.eval_every;
      opts.compute_diagnostics = false;
      target = run(cfgs[0], data[0].train, data[0].test, hyper, seed, opts).records.back().train_accuracy;
    }

    parallel_for(count, spec.threads, [&](std::size_t j) {
      SweepRow& row = rows[j];
      const auto& train = data[j].train;
      row.preset = name;
      row.nodes = spec.sweep_nodes[j];
      row.num_groups = cfgs[j].num_groups;
      row.target_accuracy = target;
      RunOptions opts;
      opts.eval_every = spec.eval_every;
      opts.compute_diagnostics = false;
      opts.stop_when = [&](const EvalRecord& r) { return r.train_accuracy >= target; };
      const RunResult result = run(cfgs[j], train, data[j].test, hyper, seed, opts);
      const EvalRecord& last = result.records.back();
      row.reached = last.train_accuracy >= target;
      row.steps_to_target = last.step;
      row.bytes_to_target = last.cum_comm_bytes;

      const std::size_t round = cfgs[j].round_length();
      const Ring global = build_rings(result.grouping, derive_seed(seed, "rings")).global;
      const CommReport comm =
          comm_cost(cfgs[j], model_bytes(train.num_classes, train.feature_dim), round, result.grouping, global);
      row.bytes_per_round = comm.bytes_per_round;
      row.peak_links = comm.peak_concurrent_links;
    });
    for (auto& row : rows) {
      row.relative_bytes_per_round = row.bytes_per_round / rows.front().bytes_per_round;
      row.relative_bytes_to_target =
          rows.front().bytes_to_target == 0
              ? 0.0
              : static_cast<double>(row.bytes_to_target) / static_cast<double>(rows.front().bytes_to_target);
      report.sweep.push_back(row);
    }
  }
  return report;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string run_label(const ComparisonReport& report, const PresetOutcome& out) {
  const bool many = std::any_of(report.runs.begin(), report.runs.end(),
                                [&](const PresetOutcome& o) { return o.seed != report.seed; });
  return many ? out.name + "@" + std::to_string(out.seed) : out.name;
}

}  // namespace

std::string curves_csv(const ComparisonReport& report) {
  std::ostringstream os;
  os << "preset,step,train_loss,train_acc,test_loss,test_acc,cum_bytes,ring_variance\n";
  for (const auto& out : report.runs) {
    const std::string label = run_label(report, out);
    for (const auto& r : out.result.records)
      os << label << ',' << r.step << ',' << fmt(r.train_loss) << ',' << fmt(r.train_accuracy) << ','
         << fmt(r.test_loss) << ',' << fmt(r.test_accuracy) << ',' << r.cum_comm_bytes << ','
         << fmt(r.ring_variance) << '\n';
  }
  return os.str();
}

std::string sweep_csv(const ComparisonReport& report) {
  std::ostringstream os;
  os << "preset,nodes,num_groups,bytes_per_round,peak_links,target_acc,reached,steps_to_target,bytes_to_target,"
        "relative_bytes_per_round,relative_bytes_to_target\n";
  for (const auto& r : report.sweep)
    os << r.preset << ',' << r.nodes << ',' << r.num_groups << ',' << fmt(r.bytes_per_round) << ',' << r.peak_links
       << ',' << fmt(r.target_accuracy) << ',' << (r.reached ? 1 : 0) << ',' << r.steps_to_target << ','
       << r.bytes_to_target << ',' << fmt(r.relative_bytes_per_round) << ',' << fmt(r.relative_bytes_to_target)
       << '\n';
  return os.str();
}

std::string summary_json(const ComparisonReport& report) {
  using nlohmann::ordered_json;
  ordered_json root;
  root["seed"] = report.seed;
  ordered_json runs = ordered_json::array();
  for (const auto& out : report.runs) {
    ordered_json j;
    j["preset"] = out.name;
    j["seed"] = out.seed;
    j["architecture"] = std::string(to_string(out.arch.architecture()));
    j["grouping"] = std::string(to_string(out.arch.grouping_scheme));
    j["num_groups"] = out.arch.num_groups;
    j["chains"] = out.arch.chains;
    j["tau1"] = out.arch.tau1;
    j["tau2"] = out.arch.tau2;
    j["tau"] = out.arch.tau;
    j["diverged"] = out.diverged;
    if (out.diverged) {
      j["error"] = out.error;
    } else {
      const auto& recs = out.result.records;
      j["initial_train_loss"] = recs.front().train_loss;
      j["final_step"] = recs.back().step;
      j["final_train_loss"] = recs.back().train_loss;
      j["final_train_acc"] = recs.back().train_accuracy;
      j["final_test_loss"] = recs.back().test_loss;
      j["final_test_acc"] = recs.back().test_accuracy;
      j["total_bytes"] = out.result.total_bytes;
      j["peak_active_nodes"] = out.result.peak_active;
      j["group_sizes"] = out.result.grouping.group_sizes();
      if (out.result.grouping_report) {
        const auto& g = *out.result.grouping_report;
        j["grouping_cost"] = {{"initial", g.initial_cost}, {"final", g.final_cost}, {"iterations", g.iterations}};
      }
    }
    runs.push_back(std::move(j));
  }
  root["runs"] = std::move(runs);
  if (!report.sweep.empty()) {
    ordered_json sweep = ordered_json::array();
    for (const auto& r : report.sweep)
      sweep.push_back({{"preset", r.preset},
                       {"nodes", r.nodes},
                       {"num_groups", r.num_groups},
                       {"bytes_per_round", r.bytes_per_round},
                       {"peak_links", r.peak_links},
                       {"target_acc", r.target_accuracy},
                       {"reached", r.reached},
                       {"steps_to_target", r.steps_to_target},
                       {"bytes_to_target", r.bytes_to_target},
                       {"relative_bytes_per_round", r.relative_bytes_per_round},
                       {"relative_bytes_to_target", r.relative_bytes_to_target}});
    root["sweep"] = std::move(sweep);
  }
  return root.dump(2) + "\n";
}

}  // namespace tornado
