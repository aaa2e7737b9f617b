#include "tornado/engine.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <utility>

#include "tornado/analysis.hpp"
#include "tornado/error.hpp"
#include "tornado/rng.hpp"

namespace tornado {

GroupingResult make_grouping(const ArchitectureConfig& cfg, const FederatedDataset& train, std::uint64_t seed) {
  const std::size_t n = train.num_nodes();
  const std::uint64_t s = derive_seed(seed, "grouping");
  if (cfg.is_flat()) return {GroupAssignment::single_group(n), {}};
  switch (cfg.grouping_scheme) {
    case GroupingScheme::IID: return group_by_iid(train, cfg.num_groups, s);
    case GroupingScheme::Cluster: return cluster(train, cfg.num_groups, s);
    case GroupingScheme::Random: return {random_grouping(n, cfg.num_groups, s), {}};
    case GroupingScheme::SingleGroup: return {GroupAssignment::single_group(n), {}};
  }
  throw std::invalid_argument("unknown grouping scheme");
}

ModelParams initial_model(std::size_t num_classes, std::size_t feature_dim, std::uint64_t seed) {
  return random_model(num_classes, feature_dim, 0.01, derive_seed(seed, "init"));
}

namespace {

ModelParams average_of(std::span<const ModelParams> models, std::span<const std::size_t> ids,
                       const std::vector<std::size_t>& sizes) {
  std::size_t total = 0;
  for (std::size_t i : ids) total += sizes[i];
  std::vector<const ModelParams*> ptrs;
  std::vector<double> weights;
  ptrs.reserve(ids.size());
  weights.reserve(ids.size());
  for (std::size_t i : ids) {
    ptrs.push_back(&models[i]);
    weights.push_back(static_cast<double>(sizes[i]) / static_cast<double>(total));
  }
  return weighted_average(std::span<const ModelParams* const>(ptrs), weights);
}

void check_test_shape(const FederatedDataset& train, const FederatedDataset& test, bool per_node) {
  if (test.total_examples() == 0) throw std::invalid_argument("empty test set");
  if (test.num_classes != train.num_classes || test.feature_dim != train.feature_dim)
    throw std::invalid_argument("test set shape does not match training data");
  if (per_node && test.num_nodes() != train.num_nodes())
    throw std::invalid_argument("pluralistic evaluation needs one test shard per node");
}

}  // namespace

ModelParams consensus_model(std::span<const ModelParams> node_models, const FederatedDataset& train) {
  if (node_models.size() != train.num_nodes()) throw std::invalid_argument("one model per node expected");
  bool identical = true;
  for (const auto& m : node_models) identical = identical && m.bitwise_equal(node_models.front());
  if (identical) return node_models.front();
  std::vector<std::size_t> ids(node_models.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  return average_of(node_models, ids, train.node_sizes());
}

std::vector<ModelParams> group_models(std::span<const ModelParams> node_models, const FederatedDataset& train,
                                      const GroupAssignment& grouping) {
  if (node_models.size() != train.num_nodes() || grouping.num_nodes() != train.num_nodes())
    throw std::invalid_argument("one model per node expected");
  const auto sizes = train.node_sizes();
  std::vector<ModelParams> out;
  for (const auto& members : grouping.members()) out.push_back(average_of(node_models, members, sizes));
  return out;
}

LossTally evaluate(const ModelParams& model, std::span<const LabeledExample> data) {
  if (data.empty()) throw std::invalid_argument("empty test set");
  LossTally tally;
  accumulate_tally(model, data, tally);
  return tally;
}

LossTally evaluate(const ModelParams& model, const FederatedDataset& data) {
  if (data.total_examples() == 0) throw std::invalid_argument("empty test set");
  LossTally tally;
  for (const auto& node : data.nodes)
    if (!node.examples.empty()) accumulate_tally(model, node.examples, tally);
  return tally;
}

LossTally evaluate_pluralistic(std::span<const ModelParams> group_models, const GroupAssignment& grouping,
                               const FederatedDataset& data) {
  if (group_models.size() != grouping.num_groups()) throw std::invalid_argument("one model per group expected");
  if (grouping.num_nodes() != data.num_nodes()) throw std::invalid_argument("grouping does not match test shards");
  if (data.total_examples() == 0) throw std::invalid_argument("empty test set");
  LossTally tally;
  const auto members = grouping.members();
  for (std::size_t k = 0; k < members.size(); ++k)
    for (std::size_t i : members[k])
      if (!data.nodes[i].examples.empty()) accumulate_tally(group_models[k], data.nodes[i].examples, tally);
  return tally;
}

namespace {

struct Evaluator {
  const FederatedDataset& train;
  const FederatedDataset& test;
  const GroupAssignment& grouping;
  bool pluralistic;
  bool diagnostics;
  VarianceLevel level;

  EvalRecord operator()(std::size_t step, std::span<const ModelParams> models, std::uint64_t bytes) const {
    EvalRecord r;
    r.step = step;
    r.cum_comm_bytes = bytes;
    const ModelParams readout = consensus_model(models, train);
    LossTally tr, te;
    if (pluralistic) {
      const auto groups = group_models(models, train, grouping);
      tr = evaluate_pluralistic(groups, grouping, train);
      te = evaluate_pluralistic(groups, grouping, test);
    } else {
      tr = evaluate(readout, train);
      te = evaluate(readout, test);
    }
    r.train_loss = tr.mean_loss();
    r.train_accuracy = tr.accuracy();
    r.test_loss = te.mean_loss();
    r.test_accuracy = te.accuracy();
    if (diagnostics) {
      r.ring_variance = ring_variance(train, readout, &grouping, level);
      const auto div = estimate_divergences(train, grouping, std::span<const ModelParams>(&readout, 1));
      r.divergence = {div.delta, div.Delta, div.D};
    }
    return r;
  }
};

bool due(std::size_t step, std::size_t total, std::size_t every) { return step % every == 0 || step == total; }

}  // namespace

RunResult run(const ArchitectureConfig& cfg, const FederatedDataset& train, const FederatedDataset& test,
              const Hyperparams& hyper, std::uint64_t seed, const RunOptions& options) {
  train.validate();
  hyper.validate();
  cfg.validate(train.num_nodes());
  if (options.eval_every == 0) throw std::invalid_argument("eval_every must be >= 1");
  check_test_shape(train, test, cfg.is_pluralistic());

  RunResult result;
  if (options.grouping) {
    result.grouping = *options.grouping;
  } else {
    auto g = make_grouping(cfg, train, seed);
    result.grouping = std::move(g.assignment);
    if (g.report.iterations > 0 || !g.report.cost_trace.empty()) result.grouping_report = g.report;
  }
  if (result.grouping.num_nodes() != train.num_nodes())
    throw std::invalid_argument("grouping covers " + std::to_string(result.grouping.num_nodes()) + " nodes, data has " +
                                std::to_string(train.num_nodes()));

  const Scheduler scheduler(cfg, result.grouping, build_rings(result.grouping, derive_seed(seed, "rings")),
                            model_bytes(train.num_classes, train.feature_dim));
  const auto sizes = train.node_sizes();
  std::vector<ModelParams> models(train.num_nodes(), initial_model(train.num_classes, train.feature_dim, seed));
  const Evaluator eval{train, test, result.grouping, cfg.is_pluralistic(), options.compute_diagnostics,
                       variance_level(cfg.architecture())};

  std::uint64_t bytes = 0;
  auto record = [&](std::size_t step) {
    result.records.push_back(eval(step, models, bytes));
    return options.stop_when && options.stop_when(result.records.back());
  };

  bool stop = record(0);
  for (std::size_t t = 0; t < hyper.steps && !stop; ++t) {
    const StepPlan plan = scheduler.plan(t);
    for (const auto& a : plan.active) {
      const ExampleList batch = select_batch(train.nodes[a.node].examples, hyper, t);
      models[a.node] = sgd_step(models[a.node], batch, hyper.eta);
      if (!models[a.node].all_finite()) throw diverged_error(t, "node " + std::to_string(a.node) + " diverged");
    }

    // Every event reads the pre-sync state; writes land afterwards.
    std::vector<std::pair<const std::vector<std::size_t>*, ModelParams>> writes;
    for (const auto* events : {&plan.group_syncs, &plan.global_syncs}) {
      for (const auto& e : *events) {
        if (e.kind == SyncKind::Transfer)
          writes.emplace_back(&e.targets, models[e.sources.front()]);
        else
          writes.emplace_back(&e.targets, average_of(models, e.sources, sizes));
      }
    }
    for (const auto& [targets, model] : writes)
      for (std::size_t i : *targets) models[i] = model;

    bytes += plan.bytes;
    result.peak_active = std::max<std::uint64_t>(result.peak_active, plan.active.size());
    result.steps_run = t + 1;
    if (options.observer) options.observer(plan, models);
    if (due(t + 1, hyper.steps, options.eval_every)) stop = record(t + 1);
  }

  result.stopped_early = result.steps_run < hyper.steps;
  result.total_bytes = bytes;
  result.final_model = consensus_model(models, train);
  if (cfg.is_pluralistic()) result.final_group_models = group_models(models, train, result.grouping);
  result.node_models = std::move(models);
  return result;
}

RunResult run_centralized(const FederatedDataset& train, const FederatedDataset& test, const Hyperparams& hyper,
                          std::uint64_t seed, const RunOptions& options) {
  train.validate();
  hyper.validate();
  if (options.eval_every == 0) throw std::invalid_argument("eval_every must be >= 1");
  check_test_shape(train, test, false);

  RunResult result;
  result.grouping = GroupAssignment::single_group(train.num_nodes());
  const ExampleList pooled = train.pooled();
  ModelParams model = initial_model(train.num_classes, train.feature_dim, seed);

  auto record = [&](std::size_t step) {
    EvalRecord r;
    r.step = step;
    const LossTally tr = evaluate(model, train);
    const LossTally te = evaluate(model, test);
    r.train_loss = tr.mean_loss();
    r.train_accuracy = tr.accuracy();
    r.test_loss = te.mean_loss();
    r.test_accuracy = te.accuracy();
    if (options.compute_diagnostics) {
      r.ring_variance = ring_variance(train, model, &result.grouping, VarianceLevel::Flat);
      const auto div = estimate_divergences(train, result.grouping, std::span<const ModelParams>(&model, 1));
      r.divergence = {div.delta, div.Delta, div.D};
    }
    result.records.push_back(r);
    return options.stop_when && options.stop_when(r);
  };

  bool stop = record(0);
  for (std::size_t t = 0; t < hyper.steps && !stop; ++t) {
    model = sgd_step(model, select_batch(pooled, hyper, t), hyper.eta);
    if (!model.all_finite()) throw diverged_error(t, "centralized model diverged");
    result.steps_run = t + 1;
    if (options.observer) {
      StepPlan plan;
      plan.step = t;
      options.observer(plan, std::span<const ModelParams>(&model, 1));
    }
    if (due(t + 1, hyper.steps, options.eval_every)) stop = record(t + 1);
  }
  result.stopped_early = result.steps_run < hyper.steps;
  result.final_model = model;
  result.node_models = {model};
  return result;
}

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

template <class T>
T get_le(std::span<const std::uint8_t> in, std::size_t& pos, const char* field) {
  if (pos + sizeof(T) > in.size()) throw parse_error(field, std::string("checkpoint truncated in ") + field);
  T v = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) v |= static_cast<T>(in[pos + b]) << (8 * b);
  pos += sizeof(T);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  if (checkpoint.models.empty()) throw std::invalid_argument("checkpoint without models");
  const auto& first = checkpoint.models.front();
  std::vector<std::uint8_t> out{'T', 'O', 'R', 'N'};
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(first.num_classes()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(first.feature_dim()));
  put_le<std::uint64_t>(out, checkpoint.step);
  for (const auto& m : checkpoint.models) {
    if (m.num_classes() != first.num_classes() || m.feature_dim() != first.feature_dim())
      throw std::invalid_argument("checkpoint models differ in shape");
    const auto bytes = m.serialize();
    out.insert(out.end(), bytes.begin(), bytes.end());
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "TORN", 4) != 0) throw parse_error("magic", "bad checkpoint magic");
  std::size_t pos = 4;
  const auto version = get_le<std::uint32_t>(bytes, pos, "version");
  if (version != kCheckpointVersion)
    throw parse_error("version", "unsupported checkpoint version " + std::to_string(version));
  const auto k = get_le<std::uint32_t>(bytes, pos, "num_classes");
  const auto d = get_le<std::uint32_t>(bytes, pos, "feature_dim");
  Checkpoint cp;
  cp.step = get_le<std::uint64_t>(bytes, pos, "step");
  const std::size_t size = model_bytes(k, d);
  if (size == 0) throw parse_error("num_classes", "checkpoint model shape is empty");
  if ((bytes.size() - pos) % size != 0 || bytes.size() == pos)
    throw parse_error("models", "checkpoint payload is not a whole number of models");
  for (; pos < bytes.size(); pos += size)
    cp.models.push_back(ModelParams::deserialize(bytes.subspan(pos, size), k, d));
  return cp;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace tornado
