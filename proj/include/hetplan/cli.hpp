#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hetplan/json_io.hpp"
#include "hetplan/planner.hpp"

namespace hetplan {

// Sets the absolute node count of (gpu_type, zone). Throws ConsistencyError
// for unknown types or zones.
void apply_event(ClusterSpec& cluster, const AvailabilityEvent& event);

struct ReplanEntry {
  std::optional<AvailabilityEvent> event;  // empty for the initial plan
  std::optional<RankedPlan> plan;
  std::optional<InfeasibleReason> infeasible;
  double search_seconds = 0.0;
  TpTableStats tp_table;  // cumulative after this search
};

// Plans once for the initial availability, then once after every event,
// sharing `tp_table` across all searches.
std::vector<ReplanEntry> replay_trace(const SearchRequest& request, const JobSpec& job, ClusterSpec cluster,
                                      const ProfileStore& store, const std::vector<AvailabilityEvent>& events,
                                      const SearchOptions& options, StageTpTable& tp_table);

// Random-walk availability of one GPU type in the given zones, starting from
// the cluster's counts and staying within [0, max_nodes].
std::vector<AvailabilityEvent> synthetic_trace(const ClusterSpec& cluster, const std::string& gpu_type,
                                               const std::vector<std::string>& zones, int num_events,
                                               int max_nodes, uint64_t seed);

// Command-line entry point. Returns the process exit code: 0 ok, 2 validation,
// 3 missing data, 4 infeasible, 5 internal.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hetplan
