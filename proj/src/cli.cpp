#include "hetplan/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <random>

#include "CLI11.hpp"
#include "hetplan/bandwidth.hpp"
#include "hetplan/oracle.hpp"
#include "hetplan/profiles.hpp"
#include "hetplan/simulator.hpp"

namespace hetplan {

void apply_event(ClusterSpec& cluster, const AvailabilityEvent& event) {
  if (!cluster.find_gpu(event.gpu_type)) {
    throw ConsistencyError("trace event references unknown gpu type '" + event.gpu_type + "'");
  }
  if (!cluster.region_of(event.zone)) {
    throw ConsistencyError("trace event references unknown zone '" + event.zone + "'");
  }
  if (event.nodes < 0) throw ConsistencyError("trace event with negative node count");
  cluster.availability[{event.gpu_type, event.zone}] = event.nodes;
}

std::vector<ReplanEntry> replay_trace(const SearchRequest& request, const JobSpec& job, ClusterSpec cluster,
                                      const ProfileStore& store, const std::vector<AvailabilityEvent>& events,
                                      const SearchOptions& options, StageTpTable& tp_table) {
  std::vector<ReplanEntry> log;
  auto replan = [&](std::optional<AvailabilityEvent> event) {
    ReplanEntry e;
    e.event = std::move(event);
    const auto start = std::chrono::steady_clock::now();
    try {
      auto res = plan_search(request, job, cluster, store, options, tp_table);
      e.plan = std::move(res.plans.front());
    } catch (const NoFeasiblePlan& ex) {
      e.infeasible = ex.reason();
    }
    e.search_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    e.tp_table = tp_table.stats();
    log.push_back(std::move(e));
  };
  replan(std::nullopt);
  for (const auto& ev : events) {
    apply_event(cluster, ev);
    replan(ev);
  }
  return log;
}

std::vector<AvailabilityEvent> synthetic_trace(const ClusterSpec& cluster, const std::string& gpu_type,
                                               const std::vector<std::string>& zones, int num_events,
                                               int max_nodes, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::map<std::string, int> count;
  for (const auto& z : zones) {
    auto it = cluster.availability.find({gpu_type, z});
    count[z] = it == cluster.availability.end() ? 0 : it->second;
  }
  std::uniform_int_distribution<size_t> pick_zone(0, zones.empty() ? 0 : zones.size() - 1);
  std::uniform_int_distribution<int> step(1, 2);
  std::uniform_real_distribution<double> gap(60.0, 600.0);
  std::bernoulli_distribution up(0.5);
  std::vector<AvailabilityEvent> out;
  double t = 0.0;
  while (static_cast<int>(out.size()) < num_events && !zones.empty()) {
    const auto& z = zones[pick_zone(rng)];
    int n = count[z] + (up(rng) ? step(rng) : -step(rng));
    n = std::clamp(n, 0, max_nodes);
    if (n == count[z]) n = count[z] == 0 ? 1 : count[z] - 1;
    count[z] = n;
    t += gap(rng);
    out.push_back({t, gpu_type, z, n});
  }
  return out;
}

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitMissing = 3;
constexpr int kExitInfeasible = 4;
constexpr int kExitInternal = 5;

int fail(std::ostream& err, int code, const std::string& kind, const std::string& message,
         Json extra = Json::object()) {
  Json j{{"error", kind}, {"message", message}};
  for (const auto& [k, v] : extra.items()) j[k] = v;
  err << j.dump() << "\n";
  return code;
}

void emit(const Json& payload, const std::string& out_path, std::ostream& out) {
  if (out_path.empty()) {
    out << payload.dump(2) << "\n";
    return;
  }
  std::ofstream f(out_path);
  if (!f) throw ParseError("cannot write '" + out_path + "'");
  f << payload.dump(2) << "\n";
}

Objective parse_objective(const std::string& s) {
  if (s == "max-throughput" || s == "throughput") return Objective::kMaxThroughput;
  if (s == "min-cost" || s == "cost" || s == "min-cost-per-iteration") return Objective::kMinCostPerIteration;
  throw SchemaError("--objective", "expected max-throughput or min-cost");
}

struct SearchFlags {
  std::string job;
  std::string cluster;
  std::string objective = "max-throughput";
  std::optional<double> budget;
  std::optional<double> min_throughput;
  int top = 1;
  int threads = 0;
  uint64_t seed = 0;
  std::string strategy = "frontier";
  int slack = 1;
  int max_stages = 0;
  bool no_h1 = false;
  bool no_h2 = false;
  bool no_h3 = false;
  std::string out;

  void add_to(CLI::App* cmd, bool full) {
    cmd->add_option("--job", job, "job profile JSON")->required();
    cmd->add_option("--cluster", cluster, "cluster JSON")->required();
    cmd->add_option("--objective", objective, "max-throughput | min-cost");
    auto* b = cmd->add_option("--budget", budget, "maximum cost per iteration");
    auto* f = cmd->add_option("--min-throughput", min_throughput, "minimum iterations per second");
    b->excludes(f);
    cmd->add_option("--out", out, "output path (default: stdout)");
    if (!full) return;
    cmd->add_option("--top", top, "number of ranked plans")->check(CLI::PositiveNumber);
    cmd->add_option("--threads", threads, "worker threads (0: machine parallelism)")->check(CLI::NonNegativeNumber);
    cmd->add_option("--seed", seed, "seed (search is deterministic)");
    cmd->add_option("--strategy", strategy, "frontier | listing")->check(CLI::IsMember({"frontier", "listing"}));
    cmd->add_option("--partition-slack", slack, "stage-size deviation from balanced")->check(CLI::NonNegativeNumber);
    cmd->add_option("--max-stages", max_stages, "cap on pipeline stages (0: none)");
    cmd->add_flag("--no-tp-within-node", no_h1, "admit tp wider than a node");
    cmd->add_flag("--no-oom-pruning", no_h2, "do not prune OOM tp degrees early");
    cmd->add_flag("--no-dp-early-stop", no_h3, "sweep every data-parallel degree");
  }

  SearchRequest request() const {
    SearchRequest r;
    r.objective = parse_objective(objective);
    if (budget) r.budget = Budget{*budget};
    if (min_throughput) r.min_throughput = MinThroughput{*min_throughput};
    return r;
  }

  SearchOptions options() const {
    SearchOptions o;
    o.top_n = top;
    o.threads = threads;
    o.strategy = strategy == "listing" ? DpStrategy::kListing : DpStrategy::kFrontier;
    o.partition_slack = slack;
    o.max_stages = max_stages;
    o.heuristics.tp_within_node = !no_h1;
    o.heuristics.prune_oom_early = !no_h2;
    o.heuristics.dp_sweep_early_stop = !no_h3;
    return o;
  }
};

Json stats_to_json(const SearchStats& s) {
  return Json{{"tasks", s.tasks},
              {"dp_runs", s.dp_runs},
              {"dp_states", s.dp_states},
              {"candidates", s.candidates},
              {"tp_table", {{"computed", s.tp_table.computed},
                            {"reused", s.tp_table.reused},
                            {"recomputed", s.tp_table.recomputed}}}};
}

int cmd_simulate(const std::string& job_path, const std::string& cluster_path, const std::string& plan_path,
                 const std::string& out_path, std::ostream& out, std::ostream& err) {
  const auto jp = load_job_profile_file(job_path);
  const auto cluster = load_cluster_file(cluster_path);
  const auto plan = load_plan_file(plan_path);
  const auto violations = validate_plan(plan, jp.job, cluster);
  if (!violations.empty()) {
    Json list = Json::array();
    for (const auto& v : violations) list.push_back({{"code", to_string(v.code)}, {"message", v.message}});
    return fail(err, kExitValidation, "InvalidPlan", violations.front().message, {{"violations", list}});
  }
  const Simulator sim(jp.job, cluster, jp.store);
  emit(report_to_json(sim.simulate(plan, false)), out_path, out);
  return kExitOk;
}

int cmd_plan(const SearchFlags& f, std::ostream& out) {
  const auto jp = load_job_profile_file(f.job);
  const auto cluster = load_cluster_file(f.cluster);
  const auto request = f.request();
  const auto res = plan_search(request, jp.job, cluster, jp.store, f.options());
  Json plans = Json::array();
  for (const auto& p : res.plans) plans.push_back(ranked_plan_to_json(p, request, res.stats.search_seconds));
  Json j{{"objective", to_string(request.objective)},
         {"constraint", constraint_to_json(request)},
         {"search_time_seconds", res.stats.search_seconds},
         {"plans", std::move(plans)},
         {"stats", stats_to_json(res.stats)}};
  emit(j, f.out, out);
  return kExitOk;
}

int cmd_oracle(const SearchFlags& f, std::ostream& out) {
  const auto jp = load_job_profile_file(f.job);
  const auto cluster = load_cluster_file(f.cluster);
  const auto request = f.request();
  const auto start = std::chrono::steady_clock::now();
  const auto res = oracle_search(request, jp.job, cluster, jp.store);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!res.best) {
    InfeasibleReason reason = InfeasibleReason::kNoResources;
    if (res.enumerated > 0 && res.evaluated == 0) reason = InfeasibleReason::kMissingProfiles;
    else if (res.evaluated > 0 && res.fits_memory == 0) reason = InfeasibleReason::kOutOfMemory;
    else if (res.fits_memory > 0) reason = request.budget ? InfeasibleReason::kBudget : InfeasibleReason::kThroughputFloor;
    throw NoFeasiblePlan(reason);
  }
  Json j{{"objective", to_string(request.objective)},
         {"constraint", constraint_to_json(request)},
         {"search_time_seconds", secs},
         {"plans", Json::array({ranked_plan_to_json(*res.best, request, secs)})},
         {"enumerated", res.enumerated},
         {"feasible", res.feasible}};
  emit(j, f.out, out);
  return kExitOk;
}

int cmd_replan(const SearchFlags& f, const std::string& trace_path, std::ostream& out) {
  const auto jp = load_job_profile_file(f.job);
  const auto cluster = load_cluster_file(f.cluster);
  const auto events = load_trace_file(trace_path);
  const auto request = f.request();
  StageTpTable table;
  const auto log = replay_trace(request, jp.job, cluster, jp.store, events, f.options(), table);
  Json entries = Json::array();
  for (const auto& e : log) {
    Json j;
    if (e.event) {
      j["event"] = {{"t", e.event->t}, {"gpu_type", e.event->gpu_type}, {"zone", e.event->zone},
                    {"nodes", e.event->nodes}};
    } else {
      j["event"] = nullptr;
    }
    if (e.plan) {
      j["t_iter"] = e.plan->report.t_iter;
      j["c_iter"] = e.plan->report.c_iter;
      j["plan"] = plan_to_json(e.plan->plan);
      j["infeasible"] = nullptr;
    } else {
      j["t_iter"] = nullptr;
      j["c_iter"] = nullptr;
      j["plan"] = nullptr;
      j["infeasible"] = to_string(*e.infeasible);
    }
    j["search_time_seconds"] = e.search_seconds;
    j["tp_table"] = {{"computed", e.tp_table.computed},
                     {"reused", e.tp_table.reused},
                     {"recomputed", e.tp_table.recomputed}};
    entries.push_back(std::move(j));
  }
  const auto stats = table.stats();
  Json j{{"objective", to_string(request.objective)},
         {"constraint", constraint_to_json(request)},
         {"entries", std::move(entries)},
         {"tp_table", {{"computed", stats.computed}, {"reused", stats.reused}, {"recomputed", stats.recomputed}}}};
  emit(j, f.out, out);
  return kExitOk;
}

int cmd_fit_bandwidth(const std::string& samples_path, int degree, const std::string& out_path,
                      std::ostream& out) {
  std::ifstream in(samples_path);
  if (!in) throw ParseError("cannot open '" + samples_path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(e.what());
  }
  const Json* arr = &j;
  std::string base;
  if (j.is_object()) {
    if (!j.contains("samples")) throw SchemaError("/samples", "missing required field");
    arr = &j["samples"];
    base = "/samples";
  }
  if (!arr->is_array()) throw SchemaError(base.empty() ? "/" : base, "expected an array");
  std::vector<BandwidthSample> samples;
  for (size_t i = 0; i < arr->size(); ++i) {
    const auto& s = (*arr)[i];
    const std::string sp = base + "/" + std::to_string(i);
    if (!s.is_array() || s.size() != 2 || !s[0].is_number() || !s[1].is_number()) {
      throw SchemaError(sp, "expected [bytes, seconds]");
    }
    samples.push_back({s[0].get<double>(), s[1].get<double>()});
  }
  const auto fit = fit_bandwidth(samples, degree);
  Json r{{"degree", degree},
         {"coefficients", fit.model.coefficients},
         {"valid_range", {fit.model.min_bytes, fit.model.max_bytes}},
         {"residual_sum_squares", fit.residual_sum_squares}};
  emit(r, out_path, out);
  return kExitOk;
}

int cmd_gen(const std::string& preset, uint64_t seed, const std::string& outdir, int trace_events,
            std::ostream& out) {
  auto params = synthetic_preset(preset);
  params.seed = seed;
  const auto inst = gen_synthetic_profile(params);
  std::filesystem::create_directories(outdir);
  const auto job_path = (std::filesystem::path(outdir) / "job.json").string();
  const auto cluster_path = (std::filesystem::path(outdir) / "cluster.json").string();
  {
    std::ofstream f(job_path);
    if (!f) throw ParseError("cannot write '" + job_path + "'");
    save_job_profile(f, inst.job, inst.store);
  }
  {
    std::ofstream f(cluster_path);
    if (!f) throw ParseError("cannot write '" + cluster_path + "'");
    save_cluster(f, inst.cluster);
  }
  Json j{{"job", job_path}, {"cluster", cluster_path}};
  if (trace_events > 0) {
    const auto& gpu = inst.cluster.gpu_types.front().name;
    std::vector<std::string> zones;
    int max_nodes = 0;
    for (const auto& z : inst.cluster.zones) {
      auto it = inst.cluster.availability.find({gpu, z.name});
      if (it != inst.cluster.availability.end() && it->second > 0 && zones.size() < 2) {
        zones.push_back(z.name);
        max_nodes = std::max(max_nodes, 2 * it->second);
      }
    }
    const auto trace = synthetic_trace(inst.cluster, gpu, zones, trace_events, max_nodes, seed);
    const auto trace_path = (std::filesystem::path(outdir) / "trace.json").string();
    std::ofstream f(trace_path);
    if (!f) throw ParseError("cannot write '" + trace_path + "'");
    f << trace_to_json(trace).dump(2) << "\n";
    j["trace"] = trace_path;
  }
  out << j.dump(2) << "\n";
  return kExitOk;
}

int cmd_validate(const std::string& job_path, const std::string& cluster_path, const std::string& plan_path,
                 std::ostream& out, std::ostream& err) {
  if (job_path.empty() && cluster_path.empty() && plan_path.empty()) {
    throw SchemaError("/", "nothing to validate: pass --job, --cluster or --plan");
  }
  Json checked = Json::array();
  std::optional<JobProfile> jp;
  std::optional<ClusterSpec> cluster;
  if (!job_path.empty()) {
    jp = load_job_profile_file(job_path);
    checked.push_back("job");
  }
  if (!cluster_path.empty()) {
    cluster = load_cluster_file(cluster_path);
    checked.push_back("cluster");
  }
  if (!plan_path.empty()) {
    const auto plan = load_plan_file(plan_path);
    checked.push_back("plan");
    if (jp && cluster) {
      const auto violations = validate_plan(plan, jp->job, *cluster);
      if (!violations.empty()) {
        Json list = Json::array();
        for (const auto& v : violations) list.push_back({{"code", to_string(v.code)}, {"message", v.message}});
        return fail(err, kExitValidation, "InvalidPlan", violations.front().message, {{"violations", list}});
      }
    }
  }
  out << Json{{"valid", true}, {"checked", checked}}.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Parallelization planner and simulator for heterogeneous GPU clusters", "hetplan"};
  app.require_subcommand(1);

  std::string job, cluster, plan_path, out_path, trace, samples, preset, outdir;
  int degree = kDefaultBandwidthDegree;
  uint64_t seed = 0;
  int trace_events = 0;

  auto* sim = app.add_subcommand("simulate", "evaluate a plan");
  sim->add_option("--job", job, "job profile JSON")->required();
  sim->add_option("--cluster", cluster, "cluster JSON")->required();
  sim->add_option("--plan", plan_path, "plan JSON")->required();
  sim->add_option("--out", out_path, "output path (default: stdout)");

  SearchFlags plan_flags;
  auto* plan = app.add_subcommand("plan", "search for the best plans");
  plan_flags.add_to(plan, true);

  SearchFlags replan_flags;
  auto* replan = app.add_subcommand("replan", "replay an availability trace, replanning per event");
  replan_flags.add_to(replan, true);
  replan->add_option("--trace", trace, "trace JSON")->required();

  SearchFlags oracle_flags;
  auto* oracle = app.add_subcommand("oracle", "exhaustive search on small instances");
  oracle_flags.add_to(oracle, false);

  auto* fit = app.add_subcommand("fit-bandwidth", "fit a bandwidth polynomial to samples");
  fit->add_option("--samples", samples, "JSON [[bytes, seconds], ...] or {samples: [...]}")->required();
  fit->add_option("--degree", degree, "polynomial degree over log2(bytes)")->check(CLI::NonNegativeNumber);
  fit->add_option("--out", out_path, "output path (default: stdout)");

  auto* gen = app.add_subcommand("gen", "write a synthetic job profile and cluster");
  gen->add_option("--preset", preset, "opt350-like | gptneo-like")->required();
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--outdir", outdir, "output directory")->required();
  gen->add_option("--trace-events", trace_events, "also write an availability trace with this many events");

  auto* val = app.add_subcommand("validate", "check input files");
  val->add_option("--job", job, "job profile JSON");
  val->add_option("--cluster", cluster, "cluster JSON");
  val->add_option("--plan", plan_path, "plan JSON (checked against --job/--cluster when given)");

  std::vector<const char*> argv{"hetplan"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    return fail(err, kExitValidation, "UsageError", e.what());
  }

  try {
    if (sim->parsed()) return cmd_simulate(job, cluster, plan_path, out_path, out, err);
    if (plan->parsed()) return cmd_plan(plan_flags, out);
    if (replan->parsed()) return cmd_replan(replan_flags, trace, out);
    if (oracle->parsed()) return cmd_oracle(oracle_flags, out);
    if (fit->parsed()) return cmd_fit_bandwidth(samples, degree, out_path, out);
    if (gen->parsed()) return cmd_gen(preset, seed, outdir, trace_events, out);
    if (val->parsed()) return cmd_validate(job, cluster, plan_path, out, err);
  } catch (const NoFeasiblePlan& e) {
    return fail(err, kExitInfeasible, e.kind(), e.what(), {{"reason", to_string(e.reason())}});
  } catch (const MissingProfile& e) {
    return fail(err, kExitMissing, e.kind(), e.what(),
                {{"gpu_type", e.gpu_type()}, {"tp", e.tp()}, {"mbs", e.mbs()}});
  } catch (const SchemaError& e) {
    return fail(err, kExitValidation, e.kind(), e.what(), {{"path", e.path()}});
  } catch (const Error& e) {
    return fail(err, kExitValidation, e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail(err, kExitInternal, "InternalError", e.what());
  }
  return fail(err, kExitInternal, "InternalError", "no command ran");
}

}  // namespace hetplan
