#include "hetplan/json_io.hpp"

#include <fstream>

#include "json_util.hpp"

namespace hetplan {

using namespace detail;

Json plan_to_json(const Plan& plan) {
  Json j;
  j["mbs"] = plan.mbs;
  j["D"] = plan.dp_degree;
  j["P"] = plan.num_stages();
  Json stages = Json::array();
  for (const auto& s : plan.stages) {
    Json js;
    js["layers"] = {s.first_layer, s.layer_count};
    js["region"] = s.region;
    Json reps = Json::array();
    for (const auto& r : s.replicas) {
      Json jr{{"gpu_type", r.gpu_type}, {"tp", r.tp}};
      if (!r.region.empty() && r.region != s.region) jr["region"] = r.region;
      reps.push_back(std::move(jr));
    }
    js["replicas"] = std::move(reps);
    stages.push_back(std::move(js));
  }
  j["stages"] = std::move(stages);
  return j;
}

namespace {

Plan plan_from(const json& j) {
  Plan plan;
  plan.mbs = get_int(j, "mbs", "");
  plan.dp_degree = get_int(j, "D", "");
  const auto& stages = require_array(j, "stages", "");
  for (size_t i = 0; i < stages.size(); ++i) {
    const std::string sp = child("/stages", i);
    const auto& js = stages[i];
    StageAssignment s;
    const auto& layers = require_array(js, "layers", sp);
    if (layers.size() != 2) throw SchemaError(child(sp, "layers"), "expected [first_layer, layer_count]");
    s.first_layer = as_int(layers[0], child(child(sp, "layers"), 0));
    s.layer_count = as_int(layers[1], child(child(sp, "layers"), 1));
    s.region = get_string(js, "region", sp);
    const auto& reps = require_array(js, "replicas", sp);
    for (size_t r = 0; r < reps.size(); ++r) {
      const std::string rp = child(child(sp, "replicas"), r);
      Replica rep;
      rep.gpu_type = get_string(reps[r], "gpu_type", rp);
      rep.tp = get_int(reps[r], "tp", rp);
      if (reps[r].contains("region")) rep.region = get_string(reps[r], "region", rp);
      s.replicas.push_back(std::move(rep));
    }
    plan.stages.push_back(std::move(s));
  }
  if (j.contains("P") && get_int(j, "P", "") != plan.num_stages()) {
    throw SchemaError("/P", "does not match the number of stages");
  }
  return plan;
}

}  // namespace

Plan plan_from_json(const Json& j) { return plan_from(json::parse(j.dump())); }

Plan load_plan(std::istream& in) { return plan_from(parse_json(in)); }

Plan load_plan_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return load_plan(in);
}

Json report_to_json(const SimReport& r) {
  Json j;
  j["t_iter"] = r.t_iter;
  j["t_pipeline"] = r.t_pipeline;
  j["t_sync"] = r.t_sync;
  j["t_update"] = r.t_update;
  j["straggler_stage"] = r.straggler_stage;
  j["t_straggler"] = r.t_straggler;
  Json mem = Json::object();
  for (const auto& [id, bytes] : r.peak_mem) mem[to_string(id)] = bytes;
  j["peak_mem"] = std::move(mem);
  j["oom"] = r.oom;
  Json off = Json::array();
  for (const auto& id : r.oom_offenders) off.push_back(to_string(id));
  j["oom_offenders"] = std::move(off);
  j["c_comp"] = r.c_comp;
  j["c_comm"] = r.c_comm;
  j["c_iter"] = r.c_iter;
  j["throughput"] = r.throughput();
  return j;
}

Json constraint_to_json(const SearchRequest& request) {
  if (request.budget) return Json{{"budget", request.budget->max_cost_per_iteration}};
  if (request.min_throughput) return Json{{"min_throughput", request.min_throughput->iterations_per_second}};
  return nullptr;
}

Json ranked_plan_to_json(const RankedPlan& p, const SearchRequest& request, double search_seconds) {
  Json j;
  j["objective"] = to_string(request.objective);
  j["constraint"] = constraint_to_json(request);
  j["t_iter"] = p.report.t_iter;
  j["c_iter"] = p.report.c_iter;
  const Json plan = plan_to_json(p.plan);
  for (const auto& [k, v] : plan.items()) j[k] = v;
  j["straggler_stage"] = p.report.straggler_stage;
  j["search_time_seconds"] = search_seconds;
  return j;
}

std::vector<AvailabilityEvent> load_trace(std::istream& in) {
  const json j = parse_json(in);
  const auto& events = require_array(j, "events", "");
  std::vector<AvailabilityEvent> out;
  for (size_t i = 0; i < events.size(); ++i) {
    const std::string ep = child("/events", i);
    AvailabilityEvent e;
    e.t = get_double(events[i], "t", ep);
    e.gpu_type = get_string(events[i], "gpu_type", ep);
    e.zone = get_string(events[i], "zone", ep);
    e.nodes = get_int(events[i], "nodes", ep);
    if (e.nodes < 0) throw SchemaError(child(ep, "nodes"), "must be >= 0");
    if (!out.empty() && e.t < out.back().t) throw SchemaError(child(ep, "t"), "must be non-decreasing");
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<AvailabilityEvent> load_trace_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return load_trace(in);
}

Json trace_to_json(const std::vector<AvailabilityEvent>& events) {
  Json arr = Json::array();
  for (const auto& e : events) {
    arr.push_back({{"t", e.t}, {"gpu_type", e.gpu_type}, {"zone", e.zone}, {"nodes", e.nodes}});
  }
  return Json{{"events", std::move(arr)}};
}

}  // namespace hetplan
