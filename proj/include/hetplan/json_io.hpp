#pragma once

// JSON forms of plans, simulation reports, search results and availability traces.

#include <iosfwd>
#include <string>
#include <vector>

#include "hetplan/domain.hpp"
#include "hetplan/planner.hpp"
#include "json.hpp"

namespace hetplan {

using Json = nlohmann::ordered_json;

// {mbs, D, P, stages:[{layers:[l0, L], region, replicas:[{gpu_type, tp}]}]}
Json plan_to_json(const Plan& plan);
// Accepts plan_to_json output and the search result schema (extra fields ignored).
Plan plan_from_json(const Json& j);
Plan load_plan(std::istream& in);
Plan load_plan_file(const std::string& path);

Json report_to_json(const SimReport& report);

// null | {"budget": C} | {"min_throughput": f}
Json constraint_to_json(const SearchRequest& request);

// {objective, constraint, t_iter, c_iter, mbs, D, P, stages, straggler_stage, search_time_seconds}
Json ranked_plan_to_json(const RankedPlan& plan, const SearchRequest& request, double search_seconds);

struct AvailabilityEvent {
  double t = 0.0;  // seconds since start
  std::string gpu_type;
  std::string zone;
  int nodes = 0;  // new absolute count

  friend bool operator==(const AvailabilityEvent&, const AvailabilityEvent&) = default;
};

// {events:[{t, gpu_type, zone, nodes}]}; t must be non-decreasing, nodes >= 0.
std::vector<AvailabilityEvent> load_trace(std::istream& in);
std::vector<AvailabilityEvent> load_trace_file(const std::string& path);
Json trace_to_json(const std::vector<AvailabilityEvent>& events);

}  // namespace hetplan
