#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "tornado/analysis.hpp"
#include "tornado/cli.hpp"
#include "tornado/engine.hpp"
#include "tornado/experiment.hpp"

using namespace tornado;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Records the first failure; later failures only flip the flag.
struct Verdict {
  bool pass = true;
  std::string first;
  void require(bool ok, const std::string& what) {
    if (!ok && pass) first = what;
    pass = pass && ok;
  }
  Outcome done(const std::string& summary) const { return {pass, pass ? summary : first}; }
};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

constexpr Architecture kAll[] = {Architecture::STAR,       Architecture::RING,       Architecture::STAR_stars,
                                 Architecture::STAR_rings, Architecture::RING_stars, Architecture::RING_rings,
                                 Architecture::stars,      Architecture::rings};

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

TrainTestSplit synthetic(std::size_t nodes, std::size_t classes, std::size_t dim, std::size_t per_node, double skew,
                         std::uint64_t seed, std::size_t test_per_node = 10) {
  SyntheticSpec spec;
  spec.num_nodes = nodes;
  spec.num_classes = classes;
  spec.feature_dim = dim;
  spec.examples_per_node = per_node;
  spec.test_examples_per_node = test_per_node;
  spec.skew = skew;
  return generate_synthetic_split(spec, seed);
}

Outcome gradient_check() {
  Verdict v;
  double worst = 0.0;
  for (std::uint64_t probe = 0; probe < 100; ++probe) {
    const auto fed = generate_synthetic(1, 2 + probe % 5, 1 + probe % 7, 15, 0.5, probe);
    const auto& data = fed.nodes[0].examples;
    ModelParams p = random_model(fed.num_classes, fed.feature_dim, 1.0, 1000 + probe);
    const auto g = gradient(p, data);
    std::vector<double> fd(g.size());
    const double h = 1e-5;
    for (std::size_t j = 0; j < g.size(); ++j) {
      const double keep = p.values()[j];
      p.values()[j] = keep + h;
      const double up = loss(p, data);
      p.values()[j] = keep - h;
      const double down = loss(p, data);
      p.values()[j] = keep;
      fd[j] = (up - down) / (2.0 * h);
    }
    std::vector<double> diff(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) diff[j] = g[j] - fd[j];
    const double rel = norm(diff) / std::max(norm(g), 1e-12);
    worst = std::max(worst, rel);
    v.require(rel <= 1e-5, "probe " + std::to_string(probe) + " relative error " + num(rel));
  }
  return v.done("100 probes, worst relative error " + num(worst));
}

std::vector<double> weighted_sum(const std::vector<std::pair<double, std::vector<double>>>& parts) {
  std::vector<double> out(parts.front().second.size(), 0.0);
  for (const auto& [w, g] : parts)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += w * g[j];
  return out;
}

Outcome unbiasedness() {
  Verdict v;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto fed = generate_synthetic(4 + seed % 9, 3 + seed % 4, 2 + seed % 5, 30, 0.1 * static_cast<double>(seed % 11), seed);
    for (std::size_t i = 0; i < fed.num_nodes(); ++i) fed.nodes[i].examples.resize(3 + (i * 11 + seed) % 28);
    const auto grouping = random_grouping(fed.num_nodes(), 1 + seed % std::min<std::size_t>(4, fed.num_nodes()), seed);
    const auto p = random_model(fed.num_classes, fed.feature_dim, 0.5, seed);
    const auto pooled = gradient(p, fed.pooled());
    const double n = static_cast<double>(fed.total_examples());

    std::vector<std::pair<double, std::vector<double>>> nodes, groups;
    for (const auto& node : fed.nodes) nodes.push_back({node.examples.size() / n, gradient(p, node.examples)});
    for (const auto& members : grouping.members()) {
      ExampleList pool;
      std::vector<std::pair<double, std::vector<double>>> within;
      double nk = 0.0;
      for (std::size_t i : members) nk += fed.nodes[i].examples.size();
      for (std::size_t i : members) {
        pool.insert(pool.end(), fed.nodes[i].examples.begin(), fed.nodes[i].examples.end());
        within.push_back({fed.nodes[i].examples.size() / nk, nodes[i].second});
      }
      const auto group_grad = gradient(p, pool);
      const auto from_nodes = weighted_sum(within);
      for (std::size_t j = 0; j < group_grad.size(); ++j) {
        const double e = std::abs(from_nodes[j] - group_grad[j]);
        worst = std::max(worst, e);
        v.require(e <= 1e-10, "group gradient off by " + num(e) + " on instance " + std::to_string(seed));
      }
      groups.push_back({nk / n, group_grad});
    }
    for (const auto* parts : {&nodes, &groups}) {
      const auto combined = weighted_sum(*parts);
      for (std::size_t j = 0; j < pooled.size(); ++j) {
        const double e = std::abs(combined[j] - pooled[j]);
        worst = std::max(worst, e);
        v.require(e <= 1e-10, "global gradient off by " + num(e) + " on instance " + std::to_string(seed));
      }
    }
  }
  return v.done("20 instances, worst deviation " + num(worst));
}

Outcome variance_ordering() {
  Verdict v;
  auto ring = ArchitectureConfig::make(Architecture::RING);
  Hyperparams h;
  h.steps = 500;
  RunOptions opts;
  opts.eval_every = 10;
  std::string summary;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    double means[2] = {0.0, 0.0};
    for (int s = 0; s < 2; ++s) {
      const auto split = synthetic(20, 10, 32, 200, s == 0 ? 1.0 : 0.0, seed);
      const auto result = run(ring, split.train, split.test, h, seed, opts);
      double total = 0.0;
      for (const auto& r : result.records) {
        if (s == 0) v.require(r.ring_variance > 0.0, "non-positive variance at step " + std::to_string(r.step));
        total += r.ring_variance;
      }
      means[s] = total / static_cast<double>(result.records.size());
    }
    v.require(means[0] > means[1], "seed " + std::to_string(seed) + ": skew=1 mean " + num(means[0]) +
                                       " <= skew=0 mean " + num(means[1]));
    summary += (seed > 1 ? ", " : "") + num(means[0]) + " vs " + num(means[1]);
  }
  return v.done("mean ring variance skew=1 vs skew=0: " + summary);
}

Outcome communication() {
  Verdict v;
  Rng rng(2024);
  std::size_t runs = 0;
  for (auto arch : kAll) {
    for (int trial = 0; trial < 50; ++trial) {
      const auto c = test::random_arch_case(arch, rng, 2, 24);
      const auto split = synthetic(c.grouping.num_nodes(), 2 + rng.below(3), 1 + rng.below(4), 3, 0.5, rng.next_u64(), 2);
      const std::uint64_t seed = rng.next_u64();
      Hyperparams h;
      h.steps = c.steps;
      RunOptions opts;
      opts.grouping = c.grouping;
      opts.compute_diagnostics = false;
      opts.eval_every = c.steps;
      const auto result = run(c.cfg, split.train, split.test, h, seed, opts);
      const auto rings = build_rings(c.grouping, derive_seed(seed, "rings"));
      const auto closed = comm_cost(c.cfg, model_bytes(split.train.num_classes, split.train.feature_dim), c.steps,
                                    c.grouping, rings.global);
      v.require(result.total_bytes == closed.total_bytes,
                std::string(to_string(arch)) + " trial " + std::to_string(trial) + ": simulated " +
                    std::to_string(result.total_bytes) + " != closed form " + std::to_string(closed.total_bytes));
      v.require(result.records.back().cum_comm_bytes == result.total_bytes, "record bytes disagree with total");
      ++runs;
    }
  }

  const std::uint64_t M = 8 * 11;
  for (std::size_t n = 10; n <= 100; n += 10) {
    const auto single = GroupAssignment::single_group(n);
    const auto g5 = random_grouping(n, 5, n);
    const auto rings5 = build_rings(g5, n);
    auto links = [&](Architecture a) {
      auto cfg = ArchitectureConfig::make(a);
      const bool flat = cfg.is_flat();
      if (!flat) {
        cfg.grouping_scheme = GroupingScheme::Random;
        cfg.num_groups = 5;
      }
      const auto& g = flat ? single : g5;
      const auto rings = flat ? build_rings(single, n) : rings5;
      const std::size_t steps = cfg.round_length() * 2;
      const auto measured = measure_schedule(schedule(cfg, g, rings, steps, M), cfg);
      const auto closed = comm_cost(cfg, M, steps, g, rings.global);
      v.require(measured.peak_concurrent_links == closed.peak_concurrent_links,
                std::string(to_string(a)) + " peak links disagree at N=" + std::to_string(n));
      v.require(measured.total_bytes == closed.total_bytes,
                std::string(to_string(a)) + " schedule bytes disagree at N=" + std::to_string(n));
      return measured.peak_concurrent_links;
    };
    v.require(links(Architecture::STAR) == n, "STAR peak links not N at N=" + std::to_string(n));
    v.require(links(Architecture::RING) == 1, "RING peak links not 1 at N=" + std::to_string(n));
    v.require(links(Architecture::STAR_rings) == 5, "STAR-rings peak links not |G| at N=" + std::to_string(n));
    v.require(links(Architecture::RING_stars) == n / 5, "RING-stars peak links not N/|G| at N=" + std::to_string(n));
  }
  return v.done(std::to_string(runs) + " simulated runs match the closed forms; peak links N, 1, |G|, N/|G| on N=10..100");
}

using Trace = std::vector<std::vector<ModelParams>>;

Trace trace_of(const ArchitectureConfig& cfg, const TrainTestSplit& d, const Hyperparams& h, std::uint64_t seed,
               std::vector<EvalRecord>* records = nullptr) {
  Trace trace;
  RunOptions opts;
  opts.observer = [&](const StepPlan&, std::span<const ModelParams> models) {
    trace.emplace_back(models.begin(), models.end());
  };
  const auto result = run(cfg, d.train, d.test, h, seed, opts);
  if (records) *records = result.records;
  return trace;
}

bool same_trace(const Trace& a, const Trace& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t t = 0; t < a.size(); ++t) {
    if (a[t].size() != b[t].size()) return false;
    for (std::size_t i = 0; i < a[t].size(); ++i)
      if (!a[t][i].bitwise_equal(b[t][i])) return false;
  }
  return true;
}

bool same_records(const std::vector<EvalRecord>& a, const std::vector<EvalRecord>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t r = 0; r < a.size(); ++r)
    if (a[r].step != b[r].step || a[r].train_loss != b[r].train_loss || a[r].test_loss != b[r].test_loss ||
        a[r].train_accuracy != b[r].train_accuracy || a[r].test_accuracy != b[r].test_accuracy)
      return false;
  return true;
}

Outcome degeneracies() {
  Verdict v;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto d = synthetic(8, 4, 6, 30, 0.8, seed);
    Hyperparams h;
    h.steps = 120;
    h.eta = 0.1;
    for (std::size_t tau1 : {1, 4, 10}) {
      auto hs = ArchitectureConfig::make(Architecture::STAR_stars);
      hs.tau1 = tau1;
      hs.tau2 = 1;
      auto star = ArchitectureConfig::make(Architecture::STAR);
      star.tau = tau1;
      std::vector<EvalRecord> ra, rb;
      const auto a = trace_of(hs, d, h, seed, &ra);
      const auto b = trace_of(star, d, h, seed, &rb);
      v.require(same_trace(a, b) && same_records(ra, rb),
                "STAR-stars(|G|=1, tau2=1) differs from STAR(tau=" + std::to_string(tau1) + ")");
    }

    const auto one = synthetic(1, 4, 6, 40, 0.5, seed);
    auto star = ArchitectureConfig::make(Architecture::STAR);
    const auto fed = run(star, one.train, one.test, h, seed);
    const auto oracle = run_centralized(one.train, one.test, h, seed);
    v.require(fed.final_model.bitwise_equal(oracle.final_model) && same_records(fed.records, oracle.records),
              "STAR(|N|=1) differs from the centralized oracle");

    for (auto arch : {Architecture::stars, Architecture::rings}) {
      auto plural = ArchitectureConfig::make(arch);
      plural.grouping_scheme = GroupingScheme::SingleGroup;
      plural.num_groups = 1;
      plural.tau1 = 5;
      const auto r = run(plural, d.train, d.test, h, seed);
      const auto consensus = consensus_model(r.node_models, d.train);
      const ModelParams models[] = {r.final_group_models.at(0)};
      const auto grouping = GroupAssignment::single_group(d.train.num_nodes());
      for (const auto* data : {&d.train, &d.test}) {
        const auto p = evaluate_pluralistic(models, grouping, *data);
        const auto c = evaluate(consensus, *data);
        v.require(p.loss_sum == c.loss_sum && p.correct == c.correct && p.count == c.count,
                  std::string(to_string(arch)) + " one-group evaluation differs from consensus evaluation");
      }
      v.require(r.final_group_models[0].bitwise_equal(r.final_model), "one-group readout differs from consensus");
    }
  }
  return v.done("hierarchy/star traces, one-node oracle and one-group readout are bitwise equal on 5 seeds");
}

Outcome grouping_descent() {
  Verdict v;
  Rng rng(606);
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t n = 4 + rng.below(20);
    const auto fed = generate_synthetic(n, 2 + rng.below(6), 2, 5 + rng.below(30), rng.uniform(), rng.next_u64());
    const std::size_t g = 1 + rng.below(std::min<std::size_t>(n, 6));
    for (const auto& r : {cluster(fed, g, inst), group_by_iid(fed, g, inst)}) {
      for (std::size_t k = 1; k < r.report.cost_trace.size(); ++k)
        v.require(r.report.cost_trace[k] <= r.report.cost_trace[k - 1],
                  "cost trace increased on instance " + std::to_string(inst));
      v.require(r.report.final_cost == r.report.cost_trace.back(), "final cost is not the last trace entry");
    }
  }

  double worst = 1.0;
  for (int inst = 0; inst < 200; ++inst) {
    const std::size_t n = 2 + rng.below(7);
    const auto fed = generate_synthetic(n, 2 + rng.below(4), 2, 3 + rng.below(20), rng.uniform(), rng.next_u64());
    const auto result = cluster(fed, 2, rng.next_u64());
    const auto state = make_grouping_state(fed, 2);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t mask = 1; mask + 1 < (std::size_t{1} << n); ++mask) {
      if (mask & 1) continue;  // node 0 always in group 0
      std::vector<std::size_t> side[2];
      for (std::size_t i = 0; i < n; ++i) side[(mask >> i) & 1].push_back(i);
      double total = 0.0;
      for (const auto& members : side) {
        double best_medoid = std::numeric_limits<double>::infinity();
        for (std::size_t m : members) {
          double cost = 0.0;
          for (std::size_t i : members) cost += emd(state.node_dists[i], state.node_dists[m]);
          best_medoid = std::min(best_medoid, cost);
        }
        total += best_medoid;
      }
      best = std::min(best, total / static_cast<double>(n));
    }
    const bool ok = result.report.final_cost <= 1.5 * best + 1e-12;
    if (best > 0.0) worst = std::max(worst, result.report.final_cost / best);
    v.require(ok, "cluster cost " + num(result.report.final_cost) + " exceeds 1.5x optimum " + num(best));
  }
  return v.done("traces monotone on 50 instances; cluster within " + num(worst) + "x of the optimum on 200 instances");
}

Outcome clustering_reduction() {
  Verdict v;
  double min_skewed = std::numeric_limits<double>::infinity();
  double uniform_total = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const double skewed = cluster(generate_synthetic(20, 10, 8, 200, 1.0, seed), 10, seed).report.reduction();
    min_skewed = std::min(min_skewed, skewed);
    v.require(skewed > 0.5, "skew=1 reduction " + num(skewed) + " on seed " + std::to_string(seed));
    uniform_total += cluster(generate_synthetic(20, 10, 8, 200, 0.0, seed), 10, seed).report.reduction();
  }
  const double uniform = uniform_total / 10.0;
  v.require(uniform < 0.1, "mean skew=0 reduction " + num(uniform));
  return v.done("skew=1 reduction >= " + num(min_skewed) + " on 10 seeds; mean skew=0 reduction " + num(uniform));
}

Outcome gap_bound() {
  Verdict v;
  double tightest = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto fed = synthetic(20, 10, 32, 200, 0.8, seed).train;
    auto hs = ArchitectureConfig::make(Architecture::STAR_stars);
    hs.grouping_scheme = GroupingScheme::Random;
    hs.num_groups = 4;
    Hyperparams h;
    h.steps = 300;
    const auto grouping = random_grouping(20, 4, seed);
    const auto check = check_gap_bound(hs, fed, grouping, h, seed, 64);
    v.require(check.gap_zero_at_resync, "gap nonzero at a resynchronization on seed " + std::to_string(seed));
    v.require(check.max_gap <= check.bound + 1e-6,
              "gap " + num(check.max_gap) + " exceeds bound " + num(check.bound) + " on seed " + std::to_string(seed));
    v.require(check.holds, "bound check reported failure on seed " + std::to_string(seed));
    if (check.bound > 0.0) tightest = std::max(tightest, check.max_gap / check.bound);
  }
  return v.done("3 seeds, largest gap/bound ratio " + num(tightest));
}

Outcome comparison() {
  Verdict v;
  ExperimentSpec spec;
  spec.seeds = 5;
  const auto report = run_comparison(spec, 1);
  const auto again = run_comparison(spec, 1);
  v.require(curves_csv(report) == curves_csv(again) && summary_json(report) == summary_json(again),
            "comparison is not deterministic");
  std::map<std::uint64_t, std::map<std::string, double>> acc;
  for (const auto& r : report.runs) {
    v.require(!r.diverged, r.name + " diverged on seed " + std::to_string(r.seed));
    if (r.diverged) continue;
    const auto& recs = r.result.records;
    v.require(recs.back().train_loss < recs.front().train_loss,
              r.name + " did not lower its train loss on seed " + std::to_string(r.seed));
    acc[r.seed][r.name] = recs.back().test_accuracy;
  }
  v.require(report.runs.size() == 45, "expected 9 presets x 5 seeds");
  int wins = 0;
  std::string detail;
  for (auto& [seed, by] : acc) {
    wins += by["Tornadoes"] >= by["FedAvg"] ? 1 : 0;
    detail += " " + num(by["Tornadoes"]) + "/" + num(by["FedAvg"]);
  }
  v.require(wins >= 3, "Tornadoes >= FedAvg on only " + std::to_string(wins) + " of 5 seeds:" + detail);
  return v.done("9 presets x 5 seeds, all losses fell; Tornadoes >= FedAvg test accuracy on " + std::to_string(wins) +
                "/5 seeds (Tornadoes/FedAvg:" + detail + ")");
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::ifstream in(e.path(), std::ios::binary);
    files[e.path().filename().string()] = std::string(std::istreambuf_iterator<char>(in), {});
  }
  return files;
}

Outcome determinism() {
  Verdict v;
  const auto root = test::scratch_dir("acceptance-determinism");
  const std::vector<std::string> data{"--set", "data.nodes=10", "--set", "train.steps=200", "--seed", "3"};
  const std::vector<std::vector<std::string>> commands{
      {"gen-data"},
      {"group", "--preset", "Tornadoes"},
      {"group", "--preset", "Tornado"},
      {"run", "--preset", "Tornado"},
      {"run", "--arch", "centralized"},
      {"compare"},
      {"sweep", "--set", "experiment.sweep=10,20,30", "--set", "experiment.step_cap=200"},
      {"diagnose", "--arch", "STAR-stars", "--set", "grouping.scheme=random", "--set", "grouping.num_groups=2"},
  };
  std::size_t files = 0;
  for (std::size_t c = 0; c < commands.size(); ++c) {
    std::vector<std::string> args = commands[c];
    args.push_back("--out");
    args.push_back((root / std::to_string(c)).string());
    args.insert(args.end(), data.begin(), data.end());
    std::map<std::string, std::string> first;
    for (int rep = 0; rep < 2; ++rep) {
      std::ostringstream out, err;
      const int code = run_cli(args, out, err);
      v.require(code == kExitOk, commands[c][0] + " exited " + std::to_string(code) + ": " + err.str());
      const auto now = snapshot(root / std::to_string(c));
      if (rep == 0) {
        first = now;
        files += now.size();
      } else {
        v.require(now == first, commands[c][0] + " output changed between identical runs");
      }
    }
  }
  return v.done(std::to_string(commands.size()) + " invocations rerun, " + std::to_string(files) +
                " output files byte-identical");
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double limit_seconds;
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient correctness", 5, gradient_check},
      {2, "unbiasedness identities", 5, unbiasedness},
      {3, "variance ordering", 120, variance_ordering},
      {4, "communication accounting", 30, communication},
      {5, "degeneracy equivalences", 60, degeneracies},
      {6, "grouping descent", 60, grouping_descent},
      {7, "clustering cost reduction", 30, clustering_reduction},
      {8, "empirical gap bound", 120, gap_bound},
      {9, "end-to-end comparison", 600, comparison},
      {10, "determinism", 600, determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (o.pass && seconds > c.limit_seconds) {
      o.pass = false;
      o.detail += "; over the " + num(c.limit_seconds) + " s limit";
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s criterion %d (%s): %s [%.2f s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                seconds);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
