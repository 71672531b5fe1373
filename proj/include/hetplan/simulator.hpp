#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hetplan/domain.hpp"
#include "hetplan/profiles.hpp"

namespace hetplan {

struct MemoryBreakdown {
  int64_t m_model = 0;
  int64_t m_activation = 0;
  int64_t m_peak = 0;
  std::map<std::string, int64_t> components;
};

struct StageTimes {
  double t_fwd_stage = 0.0;  // seconds per microbatch
  double t_bwd_stage = 0.0;
};

struct CostBreakdown {
  double c_comp = 0.0;
  double c_comm = 0.0;
  double c_iter = 0.0;
};

// Replicas of one GPU type inside a stage; all share the tp degree.
struct ReplicaGroup {
  int gpu = 0;  // index into Simulator::gpu_names()
  int tp = 1;
  int count = 0;

  friend bool operator==(const ReplicaGroup&, const ReplicaGroup&) = default;
};

// Layer sums for one stage at one (gpu_type, tp, mbs) point.
struct StageProfile {
  double t_fwd = 0.0;
  double t_bwd = 0.0;
  double t_update = 0.0;
  int64_t params = 0;
  int64_t act_bytes = 0;       // intermediate + output, per microbatch
  int64_t boundary_bytes = 0;  // output activation of the stage's last layer
};

struct GroupProfile {
  ReplicaGroup group;
  StageProfile profile;
};

// Per-microbatch and per-iteration quantities of one stage assignment. These
// are the building blocks of `simulate`, exposed so that the planner composes
// plans from exactly the same arithmetic.
struct StageCost {
  double t_compute = 0.0;  // slowest replica, fwd + bwd
  double t_update = 0.0;   // slowest replica
  double t_sync = 0.0;     // ring all-reduce across the D replicas
  double gpu_rate = 0.0;   // currency per second for the stage's nodes
  int64_t boundary_bytes = 0;
  int64_t max_peak_mem = 0;
  bool oom = false;
  int nodes = 0;
  int gpus = 0;
};

// Evaluates plans against one (job, cluster, profiles) triple. Holds lookup
// indexes only; every query is a pure function of its arguments, so a
// Simulator may be shared across threads.
class Simulator {
 public:
  Simulator(const JobSpec& job, const ClusterSpec& cluster, const ProfileStore& store);

  const JobSpec& job() const { return job_; }
  const ClusterSpec& cluster() const { return cluster_; }
  const ProfileStore& store() const { return store_; }
  const std::vector<std::string>& gpu_names() const { return gpu_names_; }
  int gpu_index(const std::string& name) const;  // -1 if unknown
  const GpuTypeSpec& gpu(int index) const { return *gpus_[static_cast<size_t>(index)]; }

  // Sums profiled values over layers [first, first + count). nullopt when any
  // layer lacks the exact (gpu, tp, mbs) record.
  std::optional<StageProfile> stage_profile(int first, int count, int gpu, int tp, int mbs) const;

  // Peak memory of one worker of a stage with `in_flight` activations resident.
  MemoryBreakdown memory(const StageProfile& profile, int in_flight) const;
  int64_t peak_bytes(const StageProfile& profile, int in_flight) const;

  // All quantities of a stage at data-parallel degree D = sum of group counts.
  // Throws MissingProfile if a group lacks profiles.
  StageCost stage_cost(int first, int count, int stage_index, int num_stages, int mbs,
                       const std::vector<ReplicaGroup>& groups) const;

  // Same, from already summed per-group profiles; `in_flight` is P - stage_index.
  StageCost stage_cost(std::span<const GroupProfile> groups, int in_flight) const;

  // Profiled tp degrees of a GPU type, ascending.
  const std::vector<int>& tp_degrees(int gpu) const { return tp_degrees_[static_cast<size_t>(gpu)]; }

  // p2p seconds per microbatch across a boundary: `bytes` over the slowest
  // (src, dst) type link at the locality implied by the two regions.
  double boundary_time(const std::vector<ReplicaGroup>& src, const std::vector<ReplicaGroup>& dst,
                       int64_t bytes, bool same_region) const;
  // Currency per iteration for a boundary: both directions, all microbatches,
  // all D pipelines.
  double boundary_price(int64_t bytes, const std::string& src_region, const std::string& dst_region,
                        int dp_degree, int64_t num_microbatches) const;
  // Sync seconds for a stage with the given groups and gradient bytes.
  double sync_time(const std::vector<ReplicaGroup>& groups, int64_t bytes, int nodes) const;

  // Full plan evaluation. With `check`, structural violations raise InvalidPlan.
  SimReport simulate(const Plan& plan, bool check = true) const;

  MemoryBreakdown worker_memory(const Plan& plan, int stage, int replica) const;
  std::pair<bool, std::vector<WorkerId>> check_oom(const Plan& plan) const;
  StageTimes stage_time(const Plan& plan, int stage, int replica) const;
  double p2p_time(const Plan& plan, int stage) const;
  double sync_time(const Plan& plan, int stage) const;
  CostBreakdown cost_per_iteration(const Plan& plan, double t_iter) const;

  // Groups a stage's replicas by GPU type (tp taken from the replicas).
  std::vector<ReplicaGroup> groups_of(const StageAssignment& stage) const;

 private:
  int64_t model_bytes(const StageProfile& profile) const;
  const LayerRecord* record(int distinct_layer, int gpu, int tp, int mbs) const;
  const BandwidthModel& link(int src, int dst, Locality locality) const;

  const JobSpec& job_;
  const ClusterSpec& cluster_;
  const ProfileStore& store_;
  std::vector<std::string> gpu_names_;
  std::vector<const GpuTypeSpec*> gpus_;
  std::vector<std::vector<int>> tp_degrees_;
  std::vector<int> layer_start_;  // expanded start index per distinct layer
  // (gpu, tp, mbs) -> record per distinct layer (nullptr when absent)
  std::map<std::tuple<int, int, int>, std::vector<const LayerRecord*>> records_;
  // [locality][src][dst]
  std::vector<std::vector<std::vector<const BandwidthModel*>>> links_;
};

// Free-function forms over a transient Simulator.
MemoryBreakdown worker_memory(const Plan& plan, int stage_idx, int replica, const JobSpec& job,
                              const ProfileStore& store, const ClusterSpec& cluster);
std::pair<bool, std::vector<WorkerId>> check_oom(const Plan& plan, const JobSpec& job,
                                                 const ClusterSpec& cluster,
                                                 const ProfileStore& store);
StageTimes stage_time(const Plan& plan, int stage_idx, int replica, const JobSpec& job,
                      const ProfileStore& store, const ClusterSpec& cluster);
double p2p_time(const Plan& plan, int stage_idx, const JobSpec& job, const ProfileStore& store,
                const ClusterSpec& cluster);
double sync_time(const Plan& plan, int stage_idx, const JobSpec& job, const ProfileStore& store,
                 const ClusterSpec& cluster);
SimReport simulate(const Plan& plan, const JobSpec& job, const ClusterSpec& cluster,
                   const ProfileStore& store);

// Iteration time of a pipeline from per-stage values:
// sum(a) + (N_b - 1) * max(a) + max(sync) + max(update), a_j = t_j + p2p_j.
double iteration_time(double sum_stage, double max_stage, double max_sync, double max_update,
                      int64_t num_microbatches);

}  // namespace hetplan
