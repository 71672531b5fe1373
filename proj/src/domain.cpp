#include "hetplan/domain.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <tuple>

namespace hetplan {

const char* to_string(InfeasibleReason reason) {
  switch (reason) {
    case InfeasibleReason::kOutOfMemory: return "out-of-memory everywhere";
    case InfeasibleReason::kBudget: return "budget";
    case InfeasibleReason::kThroughputFloor: return "throughput floor";
    case InfeasibleReason::kMissingProfiles: return "missing profiles";
    case InfeasibleReason::kNoResources: return "no resources";
  }
  return "unknown";
}

int JobSpec::total_layers() const {
  int n = 0;
  for (const auto& l : layers) n += l.repeat;
  return n;
}

std::vector<int> JobSpec::expanded_layer_refs() const {
  std::vector<int> out;
  out.reserve(static_cast<size_t>(std::max(0, total_layers())));
  for (size_t i = 0; i < layers.size(); ++i) {
    for (int r = 0; r < layers[i].repeat; ++r) out.push_back(static_cast<int>(i));
  }
  return out;
}

void JobSpec::validate() const {
  if (global_batch_size < 1) throw ConsistencyError("global_batch_size must be >= 1");
  if (sequence_length < 1) throw ConsistencyError("sequence_length must be >= 1");
  if (data_type_size < 1) throw ConsistencyError("data_type_size must be >= 1");
  if (!(optimizer_mul_factor > 0.0)) throw ConsistencyError("mul_factor must be > 0");
  if (layers.empty()) throw ConsistencyError("job has no layers");
  std::set<std::string> ids;
  for (const auto& l : layers) {
    if (l.repeat < 1) throw ConsistencyError("layer '" + l.id + "' has repeat < 1");
    if (!ids.insert(l.id).second) throw ConsistencyError("duplicate layer id '" + l.id + "'");
  }
  if (allowed_microbatch_sizes.empty()) throw ConsistencyError("no microbatch sizes allowed");
  for (int mbs : allowed_microbatch_sizes) {
    if (mbs < 1) throw ConsistencyError("microbatch sizes must be >= 1");
  }
}

const char* to_string(Locality locality) {
  switch (locality) {
    case Locality::kIntraNode: return "intra-node";
    case Locality::kIntraZone: return "intra-zone";
    case Locality::kIntraRegion: return "intra-region";
    case Locality::kInterRegion: return "inter-region";
  }
  return "unknown";
}

std::optional<Locality> parse_locality(const std::string& text) {
  for (auto l : {Locality::kIntraNode, Locality::kIntraZone, Locality::kIntraRegion,
                 Locality::kInterRegion}) {
    if (text == to_string(l)) return l;
  }
  return std::nullopt;
}

ResourcePool::ResourcePool(std::map<Key, int> counts) {
  for (const auto& [k, v] : counts) set(k.first, k.second, v);
}

int ResourcePool::count(const std::string& gpu_type, const std::string& region) const {
  auto it = counts_.find({gpu_type, region});
  return it == counts_.end() ? 0 : it->second;
}

void ResourcePool::set(const std::string& gpu_type, const std::string& region, int nodes) {
  if (nodes < 0) throw InsufficientResources("negative node count for " + gpu_type + "@" + region);
  if (nodes == 0) {
    counts_.erase({gpu_type, region});
  } else {
    counts_[{gpu_type, region}] = nodes;
  }
}

void ResourcePool::add(const std::string& gpu_type, const std::string& region, int nodes) {
  set(gpu_type, region, count(gpu_type, region) + nodes);
}

int ResourcePool::total_nodes() const {
  int n = 0;
  for (const auto& [k, v] : counts_) n += v;
  return n;
}

bool operator==(const ResourcePool& a, const ResourcePool& b) { return a.counts_ == b.counts_; }

ResourcePool pool_subtract(const ResourcePool& pool, const ResourcePool& demand) {
  ResourcePool out = pool;
  for (const auto& [key, nodes] : demand.counts()) {
    int have = pool.count(key.first, key.second);
    if (nodes > have) {
      throw InsufficientResources("need " + std::to_string(nodes) + " nodes of " + key.first +
                                  " in " + key.second + ", only " + std::to_string(have) +
                                  " available");
    }
    out.set(key.first, key.second, have - nodes);
  }
  return out;
}

ResourcePool pool_add(const ResourcePool& pool, const ResourcePool& extra) {
  ResourcePool out = pool;
  for (const auto& [key, nodes] : extra.counts()) out.add(key.first, key.second, nodes);
  return out;
}

ResourcePool pool_min(const ResourcePool& a, const ResourcePool& b) {
  ResourcePool out;
  for (const auto& [key, nodes] : a.counts()) {
    out.set(key.first, key.second, std::min(nodes, b.count(key.first, key.second)));
  }
  return out;
}

const GpuTypeSpec* ClusterSpec::find_gpu(const std::string& name) const {
  for (const auto& g : gpu_types) {
    if (g.name == name) return &g;
  }
  return nullptr;
}

const GpuTypeSpec& ClusterSpec::gpu(const std::string& name) const {
  if (const auto* g = find_gpu(name)) return *g;
  throw ConsistencyError("unknown gpu type '" + name + "'");
}

std::optional<std::string> ClusterSpec::region_of(const std::string& zone) const {
  for (const auto& z : zones) {
    if (z.name == zone) return z.region;
  }
  return std::nullopt;
}

std::vector<std::string> ClusterSpec::regions() const {
  std::set<std::string> names;
  for (const auto& z : zones) names.insert(z.region);
  return {names.begin(), names.end()};
}

ResourcePool ClusterSpec::pool() const {
  ResourcePool p;
  for (const auto& [key, nodes] : availability) {
    auto region = region_of(key.second);
    if (!region) throw ConsistencyError("availability references unknown zone '" + key.second + "'");
    p.add(key.first, *region, nodes);
  }
  return p;
}

const BandwidthModel* ClusterSpec::find_link(const std::string& src, const std::string& dst,
                                             Locality locality) const {
  std::vector<Locality> localities{locality};
  if (locality == Locality::kIntraNode) localities.push_back(Locality::kIntraZone);
  if (locality == Locality::kIntraZone || locality == Locality::kIntraNode) {
    localities.push_back(Locality::kIntraRegion);
  }
  if (locality == Locality::kIntraRegion) localities.push_back(Locality::kIntraZone);

  const std::string any = kAnyGpuType;
  for (Locality loc : localities) {
    for (const auto& [s, d] : {std::pair{src, dst}, std::pair{dst, src}, std::pair{src, any},
                               std::pair{any, dst}, std::pair{any, src}, std::pair{dst, any},
                               std::pair{any, any}}) {
      auto it = links.find(LinkKey{s, d, loc});
      if (it != links.end()) return &it->second;
    }
  }
  return nullptr;
}

const BandwidthModel& ClusterSpec::link(const std::string& src, const std::string& dst,
                                        Locality locality) const {
  if (const auto* m = find_link(src, dst, locality)) return *m;
  throw MissingProfile(src + "->" + dst, 0, 0, std::string("no ") + to_string(locality) + " link");
}

double ClusterSpec::egress_price(const std::string& src_region, const std::string& dst_region) const {
  if (auto it = egress.find({src_region, dst_region}); it != egress.end()) return it->second;
  if (auto it = egress.find({dst_region, src_region}); it != egress.end()) return it->second;
  return 0.0;
}

void ClusterSpec::validate() const {
  if (gpu_types.empty()) throw ConsistencyError("cluster declares no gpu types");
  std::set<std::string> names;
  for (const auto& g : gpu_types) {
    if (g.name.empty() || g.name == kAnyGpuType) throw ConsistencyError("invalid gpu type name");
    if (!names.insert(g.name).second) throw ConsistencyError("duplicate gpu type '" + g.name + "'");
    if (g.mem_bytes <= 0) throw ConsistencyError("gpu type '" + g.name + "' needs mem_bytes > 0");
    if (g.gpus_per_node < 1) throw ConsistencyError("gpu type '" + g.name + "' needs gpus_per_node >= 1");
    if (g.price_per_gpu_hour < 0) throw ConsistencyError("gpu type '" + g.name + "' has negative price");
  }
  std::set<std::string> zone_names;
  for (const auto& z : zones) {
    if (z.name.empty() || z.region.empty()) throw ConsistencyError("zone needs a name and a region");
    if (!zone_names.insert(z.name).second) throw ConsistencyError("duplicate zone '" + z.name + "'");
  }
  for (const auto& [key, nodes] : availability) {
    if (!names.count(key.first)) {
      throw ConsistencyError("availability references unknown gpu type '" + key.first + "'");
    }
    if (!zone_names.count(key.second)) {
      throw ConsistencyError("availability references unknown zone '" + key.second + "'");
    }
    if (nodes < 0) throw ConsistencyError("negative availability for " + key.first + "@" + key.second);
  }
  for (const auto& [key, model] : links) {
    for (const auto* end : {&key.src, &key.dst}) {
      if (*end != kAnyGpuType && !names.count(*end)) {
        throw ConsistencyError("link references unknown gpu type '" + *end + "'");
      }
    }
    if (model.coefficients.empty()) throw ConsistencyError("link model has no coefficients");
    if (!(model.min_bytes > 0) || model.max_bytes < model.min_bytes) {
      throw ConsistencyError("link model has an invalid valid_range");
    }
  }
  auto region_list = regions();
  std::set<std::string> region_set(region_list.begin(), region_list.end());
  for (const auto& [key, price] : egress) {
    if (!region_set.count(key.first) || !region_set.count(key.second)) {
      throw ConsistencyError("egress references unknown region");
    }
    if (price < 0) throw ConsistencyError("negative egress price");
  }
}

int64_t Plan::num_microbatches(const JobSpec& job) const {
  const int64_t per = int64_t{dp_degree} * mbs;
  if (per <= 0 || job.global_batch_size % per != 0) return 0;
  return job.global_batch_size / per;
}

int Plan::total_gpus(const ClusterSpec& cluster) const {
  int n = 0;
  const ResourcePool demand = plan_node_demand(*this, cluster);
  for (const auto& [key, nodes] : demand.counts()) {
    n += nodes * cluster.gpu(key.first).gpus_per_node;
  }
  return n;
}

Plan canonical(Plan plan) {
  for (auto& s : plan.stages) {
    for (auto& r : s.replicas) {
      if (r.region == s.region) r.region.clear();
    }
    std::sort(s.replicas.begin(), s.replicas.end(), [](const Replica& a, const Replica& b) {
      return std::tie(a.gpu_type, a.tp, a.region) < std::tie(b.gpu_type, b.tp, b.region);
    });
  }
  return plan;
}

namespace {

auto replica_tuple(const Replica& r) { return std::tie(r.gpu_type, r.tp, r.region); }

}  // namespace

bool plan_less(const Plan& a, const Plan& b) {
  if (a.num_stages() != b.num_stages()) return a.num_stages() < b.num_stages();
  if (a.mbs != b.mbs) return a.mbs < b.mbs;
  if (a.dp_degree != b.dp_degree) return a.dp_degree < b.dp_degree;
  for (size_t i = 0; i < a.stages.size(); ++i) {
    const auto& x = a.stages[i];
    const auto& y = b.stages[i];
    if (x.layer_count != y.layer_count) return x.layer_count < y.layer_count;
    if (x.region != y.region) return x.region < y.region;
    if (x.replicas.size() != y.replicas.size()) return x.replicas.size() < y.replicas.size();
    for (size_t r = 0; r < x.replicas.size(); ++r) {
      if (replica_tuple(x.replicas[r]) != replica_tuple(y.replicas[r])) {
        return replica_tuple(x.replicas[r]) < replica_tuple(y.replicas[r]);
      }
    }
  }
  return false;
}

int replicas_per_node(const GpuTypeSpec& gpu, int tp) {
  if (tp < 1) return 0;
  return gpu.gpus_per_node / tp;
}

std::map<std::string, int> stage_node_demand(const StageAssignment& stage,
                                             const ClusterSpec& cluster) {
  std::map<std::string, std::pair<int, int>> per_type;  // type -> (replicas, tp)
  for (const auto& r : stage.replicas) {
    auto& [count, tp] = per_type[r.gpu_type];
    ++count;
    tp = std::max(tp, r.tp);
  }
  std::map<std::string, int> nodes;
  for (const auto& [type, ct] : per_type) {
    const auto& gpu = cluster.gpu(type);
    const int per_node = replicas_per_node(gpu, ct.second);
    if (per_node < 1) {
      // TP group wider than a node: each replica spans whole nodes.
      nodes[type] = ct.first * ((ct.second + gpu.gpus_per_node - 1) / gpu.gpus_per_node);
    } else {
      nodes[type] = (ct.first + per_node - 1) / per_node;
    }
  }
  return nodes;
}

ResourcePool plan_node_demand(const Plan& plan, const ClusterSpec& cluster) {
  ResourcePool demand;
  for (const auto& s : plan.stages) {
    for (const auto& [type, nodes] : stage_node_demand(s, cluster)) demand.add(type, s.region, nodes);
  }
  return demand;
}

const char* to_string(ViolationCode code) {
  switch (code) {
    case ViolationCode::kNoStages: return "no stages";
    case ViolationCode::kBadDataParallelism: return "data parallel degree below 1";
    case ViolationCode::kLayerCoverage: return "layer ranges do not tile the model";
    case ViolationCode::kReplicaCount: return "replica count differs from D";
    case ViolationCode::kUnknownGpuType: return "unknown gpu type";
    case ViolationCode::kUnknownRegion: return "unknown region";
    case ViolationCode::kBadTpDegree: return "tp degree below 1";
    case ViolationCode::kTpExceedsNode: return "TP exceeds node width";
    case ViolationCode::kMixedTp: return "mixed tp for one gpu type in a stage";
    case ViolationCode::kStageCrossesRegion: return "stage crosses region";
    case ViolationCode::kMicrobatchNotAllowed: return "microbatch size not allowed";
    case ViolationCode::kBatchNotDivisible: return "D*mbs does not divide the global batch";
    case ViolationCode::kInsufficientNodes: return "insufficient nodes";
  }
  return "unknown";
}

std::vector<Violation> validate_plan(const Plan& plan, const JobSpec& job,
                                     const ClusterSpec& cluster) {
  return validate_plan(plan, job, cluster, cluster.pool());
}

std::vector<Violation> validate_plan(const Plan& plan, const JobSpec& job,
                                     const ClusterSpec& cluster, const ResourcePool& pool) {
  std::vector<Violation> out;
  auto add = [&out](ViolationCode code, const std::string& detail) {
    out.push_back({code, std::string(to_string(code)) + (detail.empty() ? "" : ": " + detail)});
  };

  if (plan.stages.empty()) {
    add(ViolationCode::kNoStages, "");
    return out;
  }
  if (plan.dp_degree < 1) add(ViolationCode::kBadDataParallelism, std::to_string(plan.dp_degree));
  const auto& allowed = job.allowed_microbatch_sizes;
  if (std::find(allowed.begin(), allowed.end(), plan.mbs) == allowed.end()) {
    add(ViolationCode::kMicrobatchNotAllowed, "mbs=" + std::to_string(plan.mbs));
  }
  if (plan.dp_degree >= 1 && plan.mbs >= 1 && plan.num_microbatches(job) < 1) {
    add(ViolationCode::kBatchNotDivisible,
        "gbs=" + std::to_string(job.global_batch_size) + " D=" + std::to_string(plan.dp_degree) +
            " mbs=" + std::to_string(plan.mbs));
  }

  int next_layer = 0;
  for (const auto& s : plan.stages) {
    if (s.first_layer != next_layer || s.layer_count < 1) {
      add(ViolationCode::kLayerCoverage, "stage starting at layer " + std::to_string(s.first_layer));
    }
    next_layer = s.first_layer + std::max(0, s.layer_count);
  }
  if (next_layer != job.total_layers()) {
    add(ViolationCode::kLayerCoverage, "covers " + std::to_string(next_layer) + " of " +
                                           std::to_string(job.total_layers()) + " layers");
  }

  const auto regions = cluster.regions();
  bool structural_ok = true;
  for (size_t i = 0; i < plan.stages.size(); ++i) {
    const auto& s = plan.stages[i];
    const std::string where = "stage " + std::to_string(i);
    if (static_cast<int>(s.replicas.size()) != plan.dp_degree) {
      add(ViolationCode::kReplicaCount, where + " has " + std::to_string(s.replicas.size()));
    }
    if (std::find(regions.begin(), regions.end(), s.region) == regions.end()) {
      add(ViolationCode::kUnknownRegion, where + " region '" + s.region + "'");
      structural_ok = false;
    }
    std::map<std::string, int> tp_of_type;
    for (const auto& r : s.replicas) {
      const auto* gpu = cluster.find_gpu(r.gpu_type);
      if (!gpu) {
        add(ViolationCode::kUnknownGpuType, where + " '" + r.gpu_type + "'");
        structural_ok = false;
        continue;
      }
      if (r.tp < 1) {
        add(ViolationCode::kBadTpDegree, where);
        structural_ok = false;
      } else if (r.tp > gpu->gpus_per_node) {
        add(ViolationCode::kTpExceedsNode, where + " tp=" + std::to_string(r.tp) + " on " +
                                               r.gpu_type + " (" +
                                               std::to_string(gpu->gpus_per_node) + " per node)");
      }
      if (!r.region.empty() && r.region != s.region) {
        add(ViolationCode::kStageCrossesRegion, where + " replica in '" + r.region + "'");
      }
      auto [it, inserted] = tp_of_type.emplace(r.gpu_type, r.tp);
      if (!inserted && it->second != r.tp) add(ViolationCode::kMixedTp, where + " " + r.gpu_type);
    }
  }

  if (structural_ok) {
    const ResourcePool demand = plan_node_demand(plan, cluster);
    for (const auto& [key, nodes] : demand.counts()) {
      const int have = pool.count(key.first, key.second);
      if (nodes > have) {
        add(ViolationCode::kInsufficientNodes, key.first + "@" + key.second + " needs " +
                                                   std::to_string(nodes) + ", has " +
                                                   std::to_string(have));
      }
    }
  }
  return out;
}

const char* to_string(Objective objective) {
  switch (objective) {
    case Objective::kMaxThroughput: return "max-throughput";
    case Objective::kMinCostPerIteration: return "min-cost";
  }
  return "unknown";
}

std::string to_string(const WorkerId& id) {
  std::ostringstream os;
  os << "s" << id.stage << "/r" << id.replica << "/t" << id.rank;
  return os.str();
}

}  // namespace hetplan
