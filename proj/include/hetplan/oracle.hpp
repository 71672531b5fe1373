#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "hetplan/domain.hpp"
#include "hetplan/planner.hpp"
#include "hetplan/profiles.hpp"

namespace hetplan {

// Bounds beyond which exhaustive enumeration is refused.
struct OracleCaps {
  int max_nodes = 8;
  int max_gpu_types = 2;
  int max_regions = 2;
  int max_layers = 4;
  int max_microbatch_sizes = 4;
};

// Calls `emit` once for every plan that satisfies the structural invariants
// (contiguous cover, D replicas per stage, one tp per type per stage, tp within
// node width, single-region stages, divisible batch) and fits `pool`. tp values
// are the profiled ones for each type. Throws InstanceTooLarge outside `caps`.
void enumerate_all_plans(const JobSpec& job, const ClusterSpec& cluster, const ProfileStore& store,
                         const ResourcePool& pool, const OracleCaps& caps,
                         const std::function<void(const Plan&)>& emit);
// Same over the cluster's full availability, collected.
std::vector<Plan> enumerate_all_plans(const JobSpec& job, const ClusterSpec& cluster,
                                      const ProfileStore& store, const OracleCaps& caps = {});

struct OracleResult {
  std::optional<RankedPlan> best;
  uint64_t enumerated = 0;
  uint64_t evaluated = 0;  // plans with complete profiles
  uint64_t fits_memory = 0;  // evaluated plans without OOM
  uint64_t feasible = 0;   // no OOM and constraint satisfied
};

// Best plan by the planner's ranking over every enumerated plan without OOM
// that satisfies the request's constraint.
OracleResult oracle_search(const SearchRequest& request, const JobSpec& job, const ClusterSpec& cluster,
                           const ProfileStore& store, const OracleCaps& caps = {});

}  // namespace hetplan
