#include "tornado/topology.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <stdexcept>
#include <string>

#include "tornado/rng.hpp"

namespace tornado {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::string_view to_string(Architecture arch) {
  switch (arch) {
    case Architecture::STAR: return "STAR";
    case Architecture::RING: return "RING";
    case Architecture::STAR_stars: return "STAR-stars";
    case Architecture::STAR_rings: return "STAR-rings";
    case Architecture::RING_stars: return "RING-stars";
    case Architecture::RING_rings: return "RING-rings";
    case Architecture::stars: return "stars";
    case Architecture::rings: return "rings";
  }
  return "?";
}

std::string_view to_string(GroupingScheme scheme) {
  switch (scheme) {
    case GroupingScheme::IID: return "iid";
    case GroupingScheme::Cluster: return "cluster";
    case GroupingScheme::Random: return "random";
    case GroupingScheme::SingleGroup: return "single";
  }
  return "?";
}

Architecture parse_architecture(std::string_view name) {
  // STAR and stars differ only in case; exact spellings win first.
  for (Architecture a : {Architecture::STAR, Architecture::RING, Architecture::STAR_stars, Architecture::STAR_rings,
                         Architecture::RING_stars, Architecture::RING_rings, Architecture::stars, Architecture::rings})
    if (to_string(a) == name) return a;
  const std::string n = lower(name);
  if (n == "star") return Architecture::STAR;
  if (n == "ring") return Architecture::RING;
  if (n == "star-stars") return Architecture::STAR_stars;
  if (n == "star-rings") return Architecture::STAR_rings;
  if (n == "ring-stars") return Architecture::RING_stars;
  if (n == "ring-rings") return Architecture::RING_rings;
  if (n == "stars" || n == "pluralistic-stars") return Architecture::stars;
  if (n == "rings" || n == "pluralistic-rings") return Architecture::rings;
  throw std::invalid_argument("unknown architecture '" + std::string(name) + "'");
}

GroupingScheme parse_grouping_scheme(std::string_view name) {
  const std::string n = lower(name);
  if (n == "iid") return GroupingScheme::IID;
  if (n == "cluster") return GroupingScheme::Cluster;
  if (n == "random") return GroupingScheme::Random;
  if (n == "single" || n == "singlegroup" || n == "none") return GroupingScheme::SingleGroup;
  throw std::invalid_argument("unknown grouping scheme '" + std::string(name) + "'");
}

ArchitectureConfig ArchitectureConfig::make(Architecture arch) {
  ArchitectureConfig cfg;
  switch (arch) {
    case Architecture::STAR: cfg.global_level = GlobalLevel::Star; cfg.group_level = GroupLevel::Flat; break;
    case Architecture::RING: cfg.global_level = GlobalLevel::Ring; cfg.group_level = GroupLevel::Flat; break;
    case Architecture::STAR_stars: cfg.global_level = GlobalLevel::Star; cfg.group_level = GroupLevel::Star; break;
    case Architecture::STAR_rings: cfg.global_level = GlobalLevel::Star; cfg.group_level = GroupLevel::Ring; break;
    case Architecture::RING_stars: cfg.global_level = GlobalLevel::Ring; cfg.group_level = GroupLevel::Star; break;
    case Architecture::RING_rings: cfg.global_level = GlobalLevel::Ring; cfg.group_level = GroupLevel::Ring; break;
    case Architecture::stars: cfg.global_level = GlobalLevel::None; cfg.group_level = GroupLevel::Star; break;
    case Architecture::rings: cfg.global_level = GlobalLevel::None; cfg.group_level = GroupLevel::Ring; break;
  }
  if (!cfg.is_flat()) cfg.grouping_scheme = GroupingScheme::Random;
  return cfg;
}

Architecture ArchitectureConfig::architecture() const {
  switch (global_level) {
    case GlobalLevel::Star:
      return group_level == GroupLevel::Flat   ? Architecture::STAR
             : group_level == GroupLevel::Star ? Architecture::STAR_stars
                                               : Architecture::STAR_rings;
    case GlobalLevel::Ring:
      return group_level == GroupLevel::Flat   ? Architecture::RING
             : group_level == GroupLevel::Star ? Architecture::RING_stars
                                               : Architecture::RING_rings;
    case GlobalLevel::None:
      if (group_level == GroupLevel::Flat)
        throw std::invalid_argument("a flat architecture needs a global level");
      return group_level == GroupLevel::Star ? Architecture::stars : Architecture::rings;
  }
  throw std::invalid_argument("invalid architecture levels");
}

std::size_t ArchitectureConfig::round_length() const {
  return is_consensus_group() ? tau1 * tau2 : tau;
}

void ArchitectureConfig::validate() const {
  if (is_flat() && is_pluralistic()) throw std::invalid_argument("pluralistic architectures need a group level");
  if (is_flat() && num_groups != 1) throw std::invalid_argument("flat architectures require num_groups = 1");
  if (num_groups < 1) throw std::invalid_argument("num_groups must be >= 1");
  if (grouping_scheme == GroupingScheme::SingleGroup && num_groups != 1)
    throw std::invalid_argument("single-group scheme requires num_groups = 1");
  if (chains < 1) throw std::invalid_argument("chains must be >= 1");
  if (tau < 1 || tau1 < 1 || tau2 < 1) throw std::invalid_argument("intervals must be >= 1");
  if (global_level == GlobalLevel::Ring && !is_flat() && chains > num_groups)
    throw std::invalid_argument("chains exceed the period of the global group ring");
}

void ArchitectureConfig::validate(std::size_t num_nodes) const {
  validate();
  if (num_groups > num_nodes) throw std::invalid_argument("num_groups exceeds the number of nodes");
  if (architecture() == Architecture::RING && chains > num_nodes)
    throw std::invalid_argument("chains exceed the period of the node ring");
  if (group_level == GroupLevel::Ring && global_level != GlobalLevel::Ring && chains > num_nodes - num_groups + 1)
    throw std::invalid_argument("chains exceed every possible group ring period");
}

Ring build_ring(std::size_t num_items, std::uint64_t seed) {
  if (num_items == 0) throw std::invalid_argument("build_ring: zero items");
  Ring ring;
  ring.order.resize(num_items);
  std::iota(ring.order.begin(), ring.order.end(), 0);
  Rng rng(seed);
  rng.shuffle(ring.order);
  return ring;
}

TopologyRings build_rings(const GroupAssignment& grouping, std::uint64_t seed) {
  TopologyRings rings;
  rings.flat = build_ring(grouping.num_nodes(), derive_seed(seed, "ring/flat"));
  rings.global = build_ring(grouping.num_groups(), derive_seed(seed, "ring/global"));
  const auto members = grouping.members();
  for (std::size_t k = 0; k < members.size(); ++k) {
    Ring r = build_ring(members[k].size(), derive_seed(seed, "ring/group", k));
    for (auto& p : r.order) p = members[k][p];
    rings.groups.push_back(std::move(r));
  }
  return rings;
}

Scheduler::Scheduler(ArchitectureConfig cfg, const GroupAssignment& grouping, TopologyRings rings,
                     std::uint64_t model_bytes)
    : cfg_(cfg),
      members_(grouping.members()),
      rings_(std::move(rings)),
      model_bytes_(model_bytes),
      num_nodes_(grouping.num_nodes()) {
  cfg_.validate(num_nodes_);
  if (grouping.num_groups() != cfg_.num_groups)
    throw std::invalid_argument("grouping has " + std::to_string(grouping.num_groups()) + " groups, config expects " +
                                std::to_string(cfg_.num_groups));
  const Architecture arch = cfg_.architecture();
  if (arch == Architecture::RING && rings_.flat.period() != num_nodes_)
    throw std::invalid_argument("flat ring does not cover all nodes");
  if (cfg_.global_level == GlobalLevel::Ring && !cfg_.is_flat() && rings_.global.period() != cfg_.num_groups)
    throw std::invalid_argument("global ring does not cover all groups");
  if (cfg_.group_level == GroupLevel::Ring) {
    if (rings_.groups.size() != cfg_.num_groups) throw std::invalid_argument("missing group rings");
    for (std::size_t k = 0; k < members_.size(); ++k)
      if (rings_.groups[k].period() != members_[k].size())
        throw std::invalid_argument("group ring does not match group size");
  }
  if (cfg_.group_level == GroupLevel::Ring && cfg_.global_level != GlobalLevel::Ring) {
    std::size_t largest = 0;
    for (const auto& m : members_) largest = std::max(largest, m.size());
    if (cfg_.chains > largest) throw std::invalid_argument("chains exceed every group ring period");
  }
}

std::size_t Scheduler::chains_in_group(std::size_t group) const {
  return std::min(cfg_.chains, members_.at(group).size());
}

void Scheduler::aggregate_all(StepPlan&, std::vector<SyncEvent>& out) const {
  SyncEvent e;
  e.kind = SyncKind::Aggregate;
  e.sources.resize(num_nodes_);
  std::iota(e.sources.begin(), e.sources.end(), 0);
  e.targets = e.sources;
  out.push_back(std::move(e));
}

namespace {

SyncEvent transfer(std::size_t chain, std::size_t from, std::size_t to) {
  return SyncEvent{SyncKind::Transfer, chain, {from}, {to}};
}

SyncEvent aggregate(std::size_t chain, const std::vector<std::size_t>& from, const std::vector<std::size_t>& to) {
  return SyncEvent{SyncKind::Aggregate, chain, from, to};
}

}  // namespace

StepPlan Scheduler::plan(std::size_t t) const {
  StepPlan p;
  p.step = t;
  const std::size_t b = t + 1;  // boundary reached after this step's update
  const std::size_t C = cfg_.chains;
  const std::size_t G = cfg_.num_groups;

  auto all_active = [&] {
    for (std::size_t k = 0; k < members_.size(); ++k)
      for (std::size_t i : members_[k]) p.active.push_back({k, i});
  };
  auto group_aggregates = [&](std::vector<SyncEvent>& out) {
    for (std::size_t k = 0; k < members_.size(); ++k) out.push_back(aggregate(0, members_[k], members_[k]));
  };
  // Chained positions on each group's ring at segment j; transfers move each chain one position on.
  auto group_rings = [&](std::size_t j, bool transfer_now) {
    for (std::size_t k = 0; k < members_.size(); ++k) {
      const Ring& r = rings_.groups[k];
      for (std::size_t c = 0; c < chains_in_group(k); ++c) {
        p.active.push_back({k, r.at(j + c)});
        if (transfer_now) p.group_syncs.push_back(transfer(c, r.at(j + c), r.at(j + 1 + c)));
      }
    }
  };

  switch (cfg_.architecture()) {
    case Architecture::STAR: {
      all_active();
      if (b % cfg_.tau == 0) aggregate_all(p, p.global_syncs);
      break;
    }
    case Architecture::RING: {
      const std::size_t j = t / cfg_.tau;
      for (std::size_t c = 0; c < C; ++c) {
        p.active.push_back({0, rings_.flat.at(j + c)});
        if (b % cfg_.tau == 0) p.global_syncs.push_back(transfer(c, rings_.flat.at(j + c), rings_.flat.at(j + 1 + c)));
      }
      break;
    }
    case Architecture::STAR_stars: {
      all_active();
      if (b % (cfg_.tau1 * cfg_.tau2) == 0)
        aggregate_all(p, p.global_syncs);
      else if (b % cfg_.tau1 == 0)
        group_aggregates(p.group_syncs);
      break;
    }
    case Architecture::STAR_rings: {
      const bool global = b % (cfg_.tau1 * cfg_.tau2) == 0;
      group_rings(t / cfg_.tau1, !global && b % cfg_.tau1 == 0);
      if (global) aggregate_all(p, p.global_syncs);
      break;
    }
    case Architecture::RING_stars: {
      const std::size_t l = t / (cfg_.tau1 * cfg_.tau2);
      const bool global = b % (cfg_.tau1 * cfg_.tau2) == 0;
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t k = rings_.global.at(l + c);
        for (std::size_t i : members_[k]) p.active.push_back({k, i});
        if (global) {
          p.global_syncs.push_back(aggregate(c, members_[k], members_[rings_.global.at(l + 1 + c)]));
        } else if (b % cfg_.tau1 == 0) {
          p.group_syncs.push_back(aggregate(c, members_[k], members_[k]));
        }
      }
      (void)G;
      break;
    }
    case Architecture::RING_rings: {
      const std::size_t l = t / (cfg_.tau1 * cfg_.tau2);
      const std::size_t j = t / cfg_.tau1;
      const bool global = b % (cfg_.tau1 * cfg_.tau2) == 0;
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t k = rings_.global.at(l + c);
        const std::size_t node = rings_.groups[k].at(j);
        p.active.push_back({k, node});
        if (global) {
          const std::size_t next = rings_.global.at(l + 1 + c);
          p.global_syncs.push_back(transfer(c, node, rings_.groups[next].at(j + 1)));
        } else if (b % cfg_.tau1 == 0) {
          p.group_syncs.push_back(transfer(c, node, rings_.groups[k].at(j + 1)));
        }
      }
      break;
    }
    case Architecture::stars: {
      all_active();
      if (b % cfg_.tau == 0) group_aggregates(p.group_syncs);
      break;
    }
    case Architecture::rings: {
      group_rings(t / cfg_.tau, b % cfg_.tau == 0);
      break;
    }
  }

  std::uint64_t sources = 0;
  for (const auto& e : p.group_syncs) sources += e.sources.size();
  for (const auto& e : p.global_syncs) sources += e.sources.size();
  p.bytes = sources * model_bytes_;
  return p;
}

std::vector<StepPlan> schedule(const ArchitectureConfig& cfg, const GroupAssignment& grouping,
                               const TopologyRings& rings, std::size_t steps, std::uint64_t model_bytes) {
  Scheduler scheduler(cfg, grouping, rings, model_bytes);
  std::vector<StepPlan> plans;
  plans.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) plans.push_back(scheduler.plan(t));
  return plans;
}

CommReport comm_cost(const ArchitectureConfig& cfg, std::uint64_t model_bytes, std::size_t steps,
                     const GroupAssignment& grouping, const Ring& global_ring) {
  cfg.validate(grouping.num_nodes());
  if (grouping.num_groups() != cfg.num_groups) throw std::invalid_argument("comm_cost: group count mismatch");
  const std::size_t round = cfg.round_length();
  if (steps % round != 0) throw std::invalid_argument("comm_cost: steps must be a whole number of rounds");

  const std::uint64_t M = model_bytes;
  const std::uint64_t N = grouping.num_nodes();
  const std::uint64_t C = cfg.chains;
  const std::uint64_t rounds = steps / round;  // tau_f, tau_c or tau_p
  const auto sizes = grouping.group_sizes();

  std::uint64_t chained = 0;  // sum over groups of min(C, |N^k|)
  for (std::size_t s : sizes) chained += std::min<std::uint64_t>(C, s);

  CommReport r;
  r.rounds = rounds;
  switch (cfg.architecture()) {
    case Architecture::STAR:
      r.total_bytes = M * N * rounds;
      r.peak_concurrent_links = N;
      break;
    case Architecture::RING:
      r.total_bytes = M * C * rounds;
      r.peak_concurrent_links = C;
      break;
    case Architecture::STAR_stars:
      r.total_bytes = M * N * cfg.tau2 * rounds;
      r.peak_concurrent_links = N;
      break;
    case Architecture::STAR_rings:
      r.total_bytes = M * chained * (cfg.tau2 - 1) * rounds + M * N * rounds;
      r.peak_concurrent_links = chained;
      break;
    case Architecture::RING_stars: {
      // Segment l runs the groups at global-ring positions l..l+C-1; every full
      // cycle of G segments visits each group exactly C times.
      const std::uint64_t G = cfg.num_groups;
      auto segment_nodes = [&](std::uint64_t l) {
        std::uint64_t n = 0;
        for (std::uint64_t c = 0; c < C; ++c) n += sizes[global_ring.at(l + c)];
        return n;
      };
      std::uint64_t visited = (rounds / G) * C * N;
      for (std::uint64_t l = 0; l < rounds % G; ++l) visited += segment_nodes(l);
      r.total_bytes = M * cfg.tau2 * visited;
      std::uint64_t peak = 0;
      for (std::uint64_t l = 0; l < std::min<std::uint64_t>(rounds, G); ++l) peak = std::max(peak, segment_nodes(l));
      r.peak_concurrent_links = peak;
      break;
    }
    case Architecture::RING_rings:
      r.total_bytes = M * C * cfg.tau2 * rounds;
      r.peak_concurrent_links = C;
      break;
    case Architecture::stars:
      r.total_bytes = M * N * rounds;
      r.peak_concurrent_links = N;
      break;
    case Architecture::rings:
      r.total_bytes = M * chained * rounds;
      r.peak_concurrent_links = chained;
      break;
  }
  r.bytes_per_round = rounds == 0 ? 0.0 : static_cast<double>(r.total_bytes) / static_cast<double>(rounds);
  return r;
}

CommReport measure_schedule(const std::vector<StepPlan>& plans, const ArchitectureConfig& cfg) {
  CommReport r;
  for (const auto& p : plans) {
    r.total_bytes += p.bytes;
    r.peak_concurrent_links = std::max<std::uint64_t>(r.peak_concurrent_links, p.active.size());
  }
  r.rounds = plans.size() / cfg.round_length();
  r.bytes_per_round = r.rounds == 0 ? 0.0 : static_cast<double>(r.total_bytes) / static_cast<double>(r.rounds);
  return r;
}

}  // namespace tornado
