#include "hetplan/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace hetplan {

namespace {

constexpr double kSecondsPerHour = 3600.0;

}  // namespace

double iteration_time(double sum_stage, double max_stage, double max_sync, double max_update,
                      int64_t num_microbatches) {
  return sum_stage + double(num_microbatches - 1) * max_stage + max_sync + max_update;
}

Simulator::Simulator(const JobSpec& job, const ClusterSpec& cluster, const ProfileStore& store)
    : job_(job), cluster_(cluster), store_(store) {
  for (const auto& g : cluster_.gpu_types) gpu_names_.push_back(g.name);
  std::sort(gpu_names_.begin(), gpu_names_.end());
  for (const auto& n : gpu_names_) gpus_.push_back(&cluster_.gpu(n));

  int start = 0;
  for (const auto& l : job_.layers) {
    layer_start_.push_back(start);
    start += l.repeat;
  }

  tp_degrees_.resize(gpu_names_.size());
  const size_t n_layers = store_.layers().size();
  for (size_t k = 0; k < n_layers; ++k) {
    for (const auto& [key, rec] : store_.layers()[k].records) {
      const int g = gpu_index(key.gpu_type);
      if (g < 0) continue;
      auto& slot = records_[{g, key.tp, key.mbs}];
      if (slot.empty()) slot.assign(job_.layers.size(), nullptr);
      if (k < slot.size()) slot[k] = &rec;
      tp_degrees_[static_cast<size_t>(g)].push_back(key.tp);
    }
  }
  for (auto& tps : tp_degrees_) {
    std::sort(tps.begin(), tps.end());
    tps.erase(std::unique(tps.begin(), tps.end()), tps.end());
  }

  const size_t n = gpu_names_.size();
  links_.assign(4, std::vector<std::vector<const BandwidthModel*>>(n, std::vector<const BandwidthModel*>(n)));
  for (auto loc : {Locality::kIntraNode, Locality::kIntraZone, Locality::kIntraRegion,
                   Locality::kInterRegion}) {
    for (size_t a = 0; a < n; ++a) {
      for (size_t b = 0; b < n; ++b) {
        links_[static_cast<size_t>(loc)][a][b] = cluster_.find_link(gpu_names_[a], gpu_names_[b], loc);
      }
    }
  }
}

int Simulator::gpu_index(const std::string& name) const {
  auto it = std::lower_bound(gpu_names_.begin(), gpu_names_.end(), name);
  if (it == gpu_names_.end() || *it != name) return -1;
  return static_cast<int>(it - gpu_names_.begin());
}

const LayerRecord* Simulator::record(int distinct_layer, int gpu, int tp, int mbs) const {
  auto it = records_.find({gpu, tp, mbs});
  if (it == records_.end()) return nullptr;
  return it->second[static_cast<size_t>(distinct_layer)];
}

const BandwidthModel& Simulator::link(int src, int dst, Locality locality) const {
  const auto* m = links_[static_cast<size_t>(locality)][static_cast<size_t>(src)][static_cast<size_t>(dst)];
  if (!m) {
    throw MissingProfile(gpu_names_[static_cast<size_t>(src)] + "->" + gpu_names_[static_cast<size_t>(dst)],
                         0, 0, std::string("no ") + to_string(locality) + " link");
  }
  return *m;
}

std::optional<StageProfile> Simulator::stage_profile(int first, int count, int gpu, int tp,
                                                     int mbs) const {
  StageProfile out;
  if (count <= 0) return out;
  auto it = records_.find({gpu, tp, mbs});
  if (it == records_.end()) return std::nullopt;
  const auto& recs = it->second;
  const int last = first + count - 1;
  for (size_t k = 0; k < job_.layers.size(); ++k) {
    const int lo = std::max(first, layer_start_[k]);
    const int hi = std::min(first + count, layer_start_[k] + job_.layers[k].repeat);
    if (lo >= hi) continue;
    const LayerRecord* r = recs[k];
    if (!r) return std::nullopt;
    const int n = hi - lo;
    out.t_fwd += n * r->t_fwd;
    out.t_bwd += n * r->t_bwd;
    out.t_update += n * r->t_update;
    out.params += n * r->params;
    out.act_bytes += n * (r->act_intermediate_bytes + r->act_out_bytes);
    if (last >= lo && last < hi) out.boundary_bytes = r->act_out_bytes;
  }
  return out;
}

int64_t Simulator::model_bytes(const StageProfile& profile) const {
  return static_cast<int64_t>(std::ceil(double(profile.params) * job_.optimizer_mul_factor *
                                        double(job_.data_type_size)));
}

int64_t Simulator::peak_bytes(const StageProfile& profile, int in_flight) const {
  return model_bytes(profile) + int64_t{std::max(0, in_flight)} * profile.act_bytes;
}

MemoryBreakdown Simulator::memory(const StageProfile& profile, int in_flight) const {
  MemoryBreakdown m;
  m.m_model = model_bytes(profile);
  m.m_activation = int64_t{std::max(0, in_flight)} * profile.act_bytes;
  m.m_peak = m.m_model + m.m_activation;
  const int64_t copy = profile.params * job_.data_type_size;
  const int64_t weights = std::min(m.m_model, copy);
  const int64_t grads = std::min(m.m_model - weights, copy);
  m.components["params"] = weights;
  m.components["gradients"] = grads;
  m.components["optimizer_and_buffers"] = m.m_model - weights - grads;
  m.components["activations"] = m.m_activation;
  return m;
}

double Simulator::sync_time(const std::vector<ReplicaGroup>& groups, int64_t bytes, int nodes) const {
  int dp = 0;
  for (const auto& g : groups) dp += g.count;
  if (dp <= 1 || bytes <= 0) return 0.0;
  const Locality loc = nodes <= 1 ? Locality::kIntraNode : Locality::kIntraZone;
  const double chunk = double(bytes) / dp;
  double bw = 0.0;
  bool first = true;
  auto consider = [&](int a, int b) {
    const double v = link(a, b, loc).bandwidth(chunk);
    if (first || v < bw) bw = v;
    first = false;
  };
  for (size_t a = 0; a < groups.size(); ++a) {
    if (groups[a].count >= 2) consider(groups[a].gpu, groups[a].gpu);
    for (size_t b = a + 1; b < groups.size(); ++b) consider(groups[a].gpu, groups[b].gpu);
  }
  return 2.0 * double(dp - 1) / double(dp) * double(bytes) / bw;
}

StageCost Simulator::stage_cost(std::span<const GroupProfile> groups, int in_flight) const {
  StageCost c;
  int64_t grad_bytes = 0;
  for (const auto& gp : groups) {
    const auto& g = gp.group;
    if (g.count <= 0) continue;
    const auto& prof = gp.profile;
    const auto& spec = gpu(g.gpu);
    c.t_compute = std::max(c.t_compute, prof.t_fwd + prof.t_bwd);
    c.t_update = std::max(c.t_update, prof.t_update);
    grad_bytes = std::max(grad_bytes, prof.params * job_.data_type_size);
    c.boundary_bytes = std::max(c.boundary_bytes, prof.boundary_bytes);
    const int64_t peak = peak_bytes(prof, in_flight);
    c.max_peak_mem = std::max(c.max_peak_mem, peak);
    if (peak > spec.mem_bytes) c.oom = true;

    const int per_node = replicas_per_node(spec, g.tp);
    const int nodes = per_node >= 1 ? (g.count + per_node - 1) / per_node
                                    : g.count * ((g.tp + spec.gpus_per_node - 1) / spec.gpus_per_node);
    c.nodes += nodes;
    c.gpus += nodes * spec.gpus_per_node;
    c.gpu_rate += nodes * spec.gpus_per_node * spec.price_per_gpu_hour / kSecondsPerHour;
  }
  std::vector<ReplicaGroup> plain;
  plain.reserve(groups.size());
  for (const auto& gp : groups) plain.push_back(gp.group);
  c.t_sync = sync_time(plain, grad_bytes, c.nodes);
  return c;
}

StageCost Simulator::stage_cost(int first, int count, int stage_index, int num_stages, int mbs,
                                const std::vector<ReplicaGroup>& groups) const {
  std::vector<GroupProfile> profiled;
  profiled.reserve(groups.size());
  for (const auto& g : groups) {
    if (g.count <= 0) continue;
    auto prof = stage_profile(first, count, g.gpu, g.tp, mbs);
    if (!prof) throw MissingProfile(gpu_names_[static_cast<size_t>(g.gpu)], g.tp, mbs);
    profiled.push_back({g, *prof});
  }
  return stage_cost(profiled, num_stages - stage_index);
}

double Simulator::boundary_time(const std::vector<ReplicaGroup>& src,
                                const std::vector<ReplicaGroup>& dst, int64_t bytes,
                                bool same_region) const {
  const Locality loc = same_region ? Locality::kIntraZone : Locality::kInterRegion;
  double t = 0.0;
  for (const auto& a : src) {
    if (a.count <= 0) continue;
    for (const auto& b : dst) {
      if (b.count <= 0) continue;
      t = std::max(t, comm_time(link(a.gpu, b.gpu, loc), double(bytes)));
    }
  }
  return t;
}

double Simulator::boundary_price(int64_t bytes, const std::string& src_region,
                                 const std::string& dst_region, int dp_degree,
                                 int64_t num_microbatches) const {
  const double per_byte =
      cluster_.egress_price(src_region, dst_region) + cluster_.egress_price(dst_region, src_region);
  return double(dp_degree) * double(num_microbatches) * double(bytes) * per_byte;
}

std::vector<ReplicaGroup> Simulator::groups_of(const StageAssignment& stage) const {
  std::vector<ReplicaGroup> groups;
  for (const auto& r : stage.replicas) {
    const int g = gpu_index(r.gpu_type);
    if (g < 0) throw InvalidPlan("unknown gpu type '" + r.gpu_type + "'");
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const ReplicaGroup& x) { return x.gpu == g; });
    if (it == groups.end()) {
      groups.push_back({g, r.tp, 1});
    } else {
      if (it->tp != r.tp) throw InvalidPlan("mixed tp for " + r.gpu_type + " in one stage");
      ++it->count;
    }
  }
  std::sort(groups.begin(), groups.end(),
            [](const ReplicaGroup& a, const ReplicaGroup& b) { return a.gpu < b.gpu; });
  return groups;
}

namespace {

void require_valid(const Plan& plan, const JobSpec& job, const ClusterSpec& cluster) {
  auto violations = validate_plan(plan, job, cluster);
  if (violations.empty()) return;
  std::ostringstream os;
  for (size_t i = 0; i < violations.size(); ++i) os << (i ? "; " : "") << violations[i].message;
  throw InvalidPlan(os.str());
}

}  // namespace

SimReport Simulator::simulate(const Plan& plan, bool check) const {
  if (check) require_valid(plan, job_, cluster_);
  const int P = plan.num_stages();
  const int64_t nb = plan.num_microbatches(job_);
  if (P < 1 || nb < 1) throw InvalidPlan("plan has no stages or an indivisible batch");

  std::vector<std::vector<ReplicaGroup>> groups(static_cast<size_t>(P));
  std::vector<StageCost> costs(static_cast<size_t>(P));
  for (int i = 0; i < P; ++i) {
    const auto& s = plan.stages[static_cast<size_t>(i)];
    groups[static_cast<size_t>(i)] = groups_of(s);
    costs[static_cast<size_t>(i)] =
        stage_cost(s.first_layer, s.layer_count, i, P, plan.mbs, groups[static_cast<size_t>(i)]);
  }

  SimReport rep;
  // Accumulate from the last stage backwards; the planner composes suffixes in
  // the same order, so both produce bit-identical sums.
  double sum_stage = 0.0;
  double max_stage = 0.0;
  double max_sync = 0.0;
  double max_update = 0.0;
  double rate = 0.0;
  double c_comm = 0.0;
  std::vector<double> stage_total(static_cast<size_t>(P));
  for (int i = P - 1; i >= 0; --i) {
    const auto& c = costs[static_cast<size_t>(i)];
    double a = c.t_compute;
    if (i + 1 < P) {
      const auto& s = plan.stages[static_cast<size_t>(i)];
      const auto& n = plan.stages[static_cast<size_t>(i + 1)];
      a += boundary_time(groups[static_cast<size_t>(i)], groups[static_cast<size_t>(i + 1)],
                         c.boundary_bytes, s.region == n.region);
      c_comm = boundary_price(c.boundary_bytes, s.region, n.region, plan.dp_degree, nb) + c_comm;
    }
    stage_total[static_cast<size_t>(i)] = a;
    sum_stage = a + sum_stage;
    max_stage = std::max(a, max_stage);
    max_sync = std::max(c.t_sync, max_sync);
    max_update = std::max(c.t_update, max_update);
    rate = c.gpu_rate + rate;
  }

  rep.t_iter = iteration_time(sum_stage, max_stage, max_sync, max_update, nb);
  const double t_pp = sum_stage + double(nb - 1) * max_stage;
  rep.t_pipeline.assign(static_cast<size_t>(plan.dp_degree), t_pp);
  rep.t_sync = max_sync;
  rep.t_update = max_update;
  for (int i = 0; i < P; ++i) {
    if (stage_total[static_cast<size_t>(i)] == max_stage) {
      rep.straggler_stage = i;
      break;
    }
  }
  rep.t_straggler = max_stage;

  for (int i = 0; i < P; ++i) {
    const auto& s = plan.stages[static_cast<size_t>(i)];
    for (size_t r = 0; r < s.replicas.size(); ++r) {
      const int g = gpu_index(s.replicas[r].gpu_type);
      auto prof = stage_profile(s.first_layer, s.layer_count, g, s.replicas[r].tp, plan.mbs);
      if (!prof) throw MissingProfile(s.replicas[r].gpu_type, s.replicas[r].tp, plan.mbs);
      const int64_t peak = peak_bytes(*prof, P - i);
      const bool over = peak > gpu(g).mem_bytes;
      for (int rank = 0; rank < s.replicas[r].tp; ++rank) {
        WorkerId id{i, static_cast<int>(r), rank};
        rep.peak_mem[id] = peak;
        if (over) rep.oom_offenders.push_back(id);
      }
    }
  }
  rep.oom = !rep.oom_offenders.empty();

  rep.c_comp = rate * rep.t_iter;
  rep.c_comm = c_comm;
  rep.c_iter = rep.c_comp + rep.c_comm;
  return rep;
}

MemoryBreakdown Simulator::worker_memory(const Plan& plan, int stage, int replica) const {
  const auto& s = plan.stages.at(static_cast<size_t>(stage));
  const auto& r = s.replicas.at(static_cast<size_t>(replica));
  const int g = gpu_index(r.gpu_type);
  if (g < 0) throw InvalidPlan("unknown gpu type '" + r.gpu_type + "'");
  auto prof = stage_profile(s.first_layer, s.layer_count, g, r.tp, plan.mbs);
  if (!prof) throw MissingProfile(r.gpu_type, r.tp, plan.mbs);
  return memory(*prof, plan.num_stages() - stage);
}

std::pair<bool, std::vector<WorkerId>> Simulator::check_oom(const Plan& plan) const {
  std::vector<WorkerId> offenders;
  for (int i = 0; i < plan.num_stages(); ++i) {
    const auto& s = plan.stages[static_cast<size_t>(i)];
    for (size_t r = 0; r < s.replicas.size(); ++r) {
      const auto mem = worker_memory(plan, i, static_cast<int>(r));
      if (mem.m_peak > cluster_.gpu(s.replicas[r].gpu_type).mem_bytes) {
        for (int rank = 0; rank < s.replicas[r].tp; ++rank) {
          offenders.push_back({i, static_cast<int>(r), rank});
        }
      }
    }
  }
  return {!offenders.empty(), offenders};
}

StageTimes Simulator::stage_time(const Plan& plan, int stage, int replica) const {
  const auto& s = plan.stages.at(static_cast<size_t>(stage));
  const auto& r = s.replicas.at(static_cast<size_t>(replica));
  const int g = gpu_index(r.gpu_type);
  if (g < 0) throw InvalidPlan("unknown gpu type '" + r.gpu_type + "'");
  auto prof = stage_profile(s.first_layer, s.layer_count, g, r.tp, plan.mbs);
  if (!prof) throw MissingProfile(r.gpu_type, r.tp, plan.mbs);
  return {prof->t_fwd, prof->t_bwd};
}

double Simulator::p2p_time(const Plan& plan, int stage) const {
  if (stage + 1 >= plan.num_stages()) return 0.0;
  const auto& s = plan.stages.at(static_cast<size_t>(stage));
  const auto& n = plan.stages.at(static_cast<size_t>(stage + 1));
  const auto src = groups_of(s);
  int64_t bytes = 0;
  for (const auto& g : src) {
    auto prof = stage_profile(s.first_layer, s.layer_count, g.gpu, g.tp, plan.mbs);
    if (!prof) throw MissingProfile(gpu_names_[static_cast<size_t>(g.gpu)], g.tp, plan.mbs);
    bytes = std::max(bytes, prof->boundary_bytes);
  }
  return boundary_time(src, groups_of(n), bytes, s.region == n.region);
}

double Simulator::sync_time(const Plan& plan, int stage) const {
  const auto& s = plan.stages.at(static_cast<size_t>(stage));
  return stage_cost(s.first_layer, s.layer_count, stage, plan.num_stages(), plan.mbs, groups_of(s))
      .t_sync;
}

CostBreakdown Simulator::cost_per_iteration(const Plan& plan, double t_iter) const {
  const int P = plan.num_stages();
  const int64_t nb = plan.num_microbatches(job_);
  CostBreakdown c;
  double rate = 0.0;
  for (int i = P - 1; i >= 0; --i) {
    const auto& s = plan.stages[static_cast<size_t>(i)];
    const auto cost = stage_cost(s.first_layer, s.layer_count, i, P, plan.mbs, groups_of(s));
    if (i + 1 < P) {
      const auto& n = plan.stages[static_cast<size_t>(i + 1)];
      c.c_comm = boundary_price(cost.boundary_bytes, s.region, n.region, plan.dp_degree, nb) + c.c_comm;
    }
    rate = cost.gpu_rate + rate;
  }
  c.c_comp = rate * t_iter;
  c.c_iter = c.c_comp + c.c_comm;
  return c;
}

MemoryBreakdown worker_memory(const Plan& plan, int stage_idx, int replica, const JobSpec& job,
                              const ProfileStore& store, const ClusterSpec& cluster) {
  return Simulator(job, cluster, store).worker_memory(plan, stage_idx, replica);
}

std::pair<bool, std::vector<WorkerId>> check_oom(const Plan& plan, const JobSpec& job,
                                                 const ClusterSpec& cluster,
                                                 const ProfileStore& store) {
  return Simulator(job, cluster, store).check_oom(plan);
}

StageTimes stage_time(const Plan& plan, int stage_idx, int replica, const JobSpec& job,
                      const ProfileStore& store, const ClusterSpec& cluster) {
  return Simulator(job, cluster, store).stage_time(plan, stage_idx, replica);
}

double p2p_time(const Plan& plan, int stage_idx, const JobSpec& job, const ProfileStore& store,
                const ClusterSpec& cluster) {
  return Simulator(job, cluster, store).p2p_time(plan, stage_idx);
}

double sync_time(const Plan& plan, int stage_idx, const JobSpec& job, const ProfileStore& store,
                 const ClusterSpec& cluster) {
  return Simulator(job, cluster, store).sync_time(plan, stage_idx);
}

SimReport simulate(const Plan& plan, const JobSpec& job, const ClusterSpec& cluster,
                   const ProfileStore& store) {
  return Simulator(job, cluster, store).simulate(plan);
}

}  // namespace hetplan
