#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <tuple>
#include <vector>

#include "hetplan/domain.hpp"
#include "hetplan/profiles.hpp"
#include "hetplan/simulator.hpp"

namespace hetplan {

// Identifies one stage position: stage `stage_index` of a `num_stages`-stage
// pipeline covering layers [first_layer, first_layer + layer_count) at `mbs`.
// The stage index matters because resident activations depend on it.
struct StageSignature {
  int num_stages = 1;
  int stage_index = 0;
  int first_layer = 0;
  int layer_count = 0;
  int mbs = 1;

  friend auto operator<=>(const StageSignature&, const StageSignature&) = default;
};

struct TpChoice {
  int tp = 1;
  bool fits_memory = false;
  bool within_node = false;
};

struct TpEntry {
  // Smallest profiled tp within node width whose worker fits in memory; 0 = infeasible.
  int min_tp = 0;
  // Every profiled tp for the GPU type, ascending.
  std::vector<TpChoice> choices;
  bool profiled = false;  // at least one tp has complete profiles for the stage
};

struct TpTableStats {
  uint64_t computed = 0;    // entries built for the first time
  uint64_t reused = 0;      // lookups served from the table
  uint64_t recomputed = 0;  // entries built although already present
};

// Minimum-tp table (pruning of OOM configurations). Independent of node
// availability, so one table serves every replanning round. Thread-safe.
class StageTpTable {
 public:
  StageTpTable() = default;
  StageTpTable(StageTpTable&& other) noexcept;
  StageTpTable& operator=(StageTpTable&&) = delete;

  const TpEntry& get(const Simulator& sim, const StageSignature& stage, const std::string& gpu_type);
  std::optional<TpEntry> find(const StageSignature& stage, const std::string& gpu_type) const;
  size_t size() const;
  TpTableStats stats() const;

 private:
  using Key = std::pair<StageSignature, std::string>;
  mutable std::shared_mutex mu_;
  std::map<Key, TpEntry> entries_;
  std::atomic<uint64_t> computed_{0};
  std::atomic<uint64_t> reused_{0};
  std::atomic<uint64_t> recomputed_{0};
};

// Brute-force builder of a single entry; what StageTpTable caches.
TpEntry compute_tp_entry(const Simulator& sim, const StageSignature& stage, int gpu);

// Fills a table for every stage of the given partitions (stage sizes) and mbs values.
StageTpTable min_tp_table(const JobSpec& job, const ClusterSpec& cluster, const ProfileStore& store,
                          const std::vector<std::vector<int>>& partitions,
                          const std::vector<int>& mbs_set);

// Stage-size bounds for P stages over `total` layers: sizes may deviate from the
// balanced floor/ceil sizes by at most `slack` layers (never below 1).
std::pair<int, int> stage_size_bounds(int total_layers, int num_stages, int slack);

// Contiguous partitions (as stage sizes) of the job's layers into P stages whose
// sizes respect stage_size_bounds. Lexicographic order.
std::vector<std::vector<int>> enumerate_partitions(const JobSpec& job, int num_stages, int slack = 1);
std::vector<std::vector<int>> enumerate_partitions(int total_layers, int num_stages, int slack);

// Replica-count maps (gpu_type -> replicas) over `dp` replicas, with the given
// tp per type, whose node demand fits the pool in `region`. Types without a tp
// entry (infeasible under the tp table) or with tp wider than a node are excluded.
std::vector<std::map<std::string, int>> generate_combos(const ResourcePool& pool, int dp,
                                                         const std::map<std::string, int>& stage_tp,
                                                         const std::string& region,
                                                         const ClusterSpec& cluster);

// Region for a stage: `current_region` if the demand fits there, otherwise the
// first fitting region by descending available nodes then name.
std::optional<std::string> find_region_fits(const std::map<std::string, int>& node_demand,
                                            const std::optional<std::string>& current_region,
                                            const ResourcePool& pool);

struct Heuristics {
  bool tp_within_node = true;       // H1
  bool prune_oom_early = true;      // H2
  bool dp_sweep_early_stop = true;  // H3 (throughput) / H4 (cost)
};

enum class DpStrategy {
  kFrontier,  // exact: Pareto frontier per memo key
  kListing,   // scalar memo, first-fit regions, straggler loop with quantized budget
};

struct SearchOptions {
  Heuristics heuristics;
  DpStrategy strategy = DpStrategy::kFrontier;
  int partition_slack = 1;
  int sweep_patience = 1;
  // Keep sweeping D past `sweep_patience` non-improvements while an optimistic
  // bound says a remaining degree could still win.
  bool bounded_stop = true;
  int max_straggler_iters = 8;
  double budget_quantum = 1e-3;
  int top_n = 1;
  int threads = 0;  // 0: hardware concurrency
  int max_stages = 0;  // 0: no limit beyond layers and nodes
  double time_limit_seconds = 0.0;  // 0: none; plan_search throws SearchTimeout past it
};

struct RankedPlan {
  Plan plan;
  SimReport report;
};

struct SearchStats {
  double search_seconds = 0.0;
  uint64_t tasks = 0;
  uint64_t dp_runs = 0;
  uint64_t dp_states = 0;
  uint64_t candidates = 0;
  TpTableStats tp_table;
};

struct SearchResult {
  std::vector<RankedPlan> plans;  // best first
  SearchStats stats;
};

// Ranking used by planner and oracle: objective, then c_iter, then GPU count,
// then plan order.
bool ranks_before(const RankedPlan& a, const RankedPlan& b, Objective objective,
                  const ClusterSpec& cluster);
bool satisfies_constraints(const SimReport& report, const SearchRequest& request);

// Sub-solution returned by solve_dp for stages stage_index..P-1.
struct SubSolution {
  double t_iter = 0.0;     // iteration time of the suffix treated as a pipeline
  double straggler = 0.0;  // max per-microbatch stage time (incl. p2p)
  double cost = 0.0;       // cost of the suffix at its own iteration time
  std::vector<StageAssignment> stages;
};

// Exposes one DP run for a fixed partition (stage sizes), mbs and D, starting at
// `stage_index` with `pool` and `budget` (infinite when absent). Used by tests
// to exercise the recursion directly; plan_search drives the same code.
std::optional<SubSolution> solve_dp(const Simulator& sim, StageTpTable& tp_table,
                                    const std::vector<int>& partition, int mbs, int dp,
                                    int stage_index, const ResourcePool& pool,
                                    std::optional<double> budget,
                                    const std::optional<std::string>& current_region,
                                    const SearchOptions& options = {});

// Full search. Throws NoFeasiblePlan. `tp_table` may be shared across calls.
SearchResult plan_search(const SearchRequest& request, const JobSpec& job, const ClusterSpec& cluster,
                         const ProfileStore& store, const SearchOptions& options,
                         StageTpTable& tp_table);
SearchResult plan_search(const SearchRequest& request, const JobSpec& job, const ClusterSpec& cluster,
                         const ProfileStore& store, const SearchOptions& options = {});

}  // namespace hetplan
