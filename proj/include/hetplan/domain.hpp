#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hetplan/bandwidth.hpp"
#include "hetplan/errors.hpp"

namespace hetplan {

// One entry of the model's layer list; `repeat` identical copies are stored once.
struct LayerRef {
  std::string id;
  int repeat = 1;

  friend bool operator==(const LayerRef&, const LayerRef&) = default;
};

struct JobSpec {
  std::string model_name;
  std::vector<LayerRef> layers;
  int64_t global_batch_size = 1;
  int64_t sequence_length = 1;
  int data_type_size = 2;
  double optimizer_mul_factor = 1.0;
  std::vector<int> allowed_microbatch_sizes{1};

  // Sum of repeat counts; plans address layers by this expanded index.
  int total_layers() const;
  // For every expanded layer index, the index into `layers`.
  std::vector<int> expanded_layer_refs() const;
  // Throws ConsistencyError when an invariant does not hold.
  void validate() const;

  friend bool operator==(const JobSpec&, const JobSpec&) = default;
};

struct GpuTypeSpec {
  std::string name;
  int64_t mem_bytes = 0;
  int gpus_per_node = 1;
  double price_per_gpu_hour = 0.0;

  friend bool operator==(const GpuTypeSpec&, const GpuTypeSpec&) = default;
};

enum class Locality { kIntraNode, kIntraZone, kIntraRegion, kInterRegion };

const char* to_string(Locality locality);
std::optional<Locality> parse_locality(const std::string& text);

struct Zone {
  std::string name;
  std::string region;

  friend bool operator==(const Zone&, const Zone&) = default;
};

struct LinkKey {
  std::string src;  // GPU type name, or "*" for any
  std::string dst;
  Locality locality = Locality::kIntraZone;

  friend auto operator<=>(const LinkKey&, const LinkKey&) = default;
};

inline constexpr const char* kAnyGpuType = "*";

// (gpu_type, region) -> node count. Zones are consolidated into regions.
class ResourcePool {
 public:
  using Key = std::pair<std::string, std::string>;

  ResourcePool() = default;
  explicit ResourcePool(std::map<Key, int> counts);

  int count(const std::string& gpu_type, const std::string& region) const;
  void set(const std::string& gpu_type, const std::string& region, int nodes);
  void add(const std::string& gpu_type, const std::string& region, int nodes);
  const std::map<Key, int>& counts() const { return counts_; }
  int total_nodes() const;

  friend bool operator==(const ResourcePool& a, const ResourcePool& b);

 private:
  std::map<Key, int> counts_;
};

// Componentwise difference. Throws InsufficientResources if any count would go negative.
ResourcePool pool_subtract(const ResourcePool& pool, const ResourcePool& demand);
ResourcePool pool_add(const ResourcePool& pool, const ResourcePool& extra);
// Componentwise minimum; used to clip quotas to availability.
ResourcePool pool_min(const ResourcePool& a, const ResourcePool& b);

struct ClusterSpec {
  std::vector<GpuTypeSpec> gpu_types;
  std::vector<Zone> zones;
  std::map<std::pair<std::string, std::string>, int> availability;  // (gpu_type, zone) -> nodes
  std::map<LinkKey, BandwidthModel> links;
  std::map<std::pair<std::string, std::string>, double> egress;  // (src region, dst region) -> price/byte

  const GpuTypeSpec& gpu(const std::string& name) const;
  const GpuTypeSpec* find_gpu(const std::string& name) const;
  std::optional<std::string> region_of(const std::string& zone) const;
  // Distinct region names, sorted.
  std::vector<std::string> regions() const;
  // Availability with zones collapsed into their regions.
  ResourcePool pool() const;

  // Link lookup with fallbacks: reversed direction, wildcard types, and
  // intra-zone <-> intra-region (cross-zone traffic inside a region is treated
  // like intra-zone). Intra-node falls back to intra-zone. Returns nullptr if absent.
  const BandwidthModel* find_link(const std::string& src, const std::string& dst,
                                  Locality locality) const;
  // As find_link, but throws MissingProfile when no model applies.
  const BandwidthModel& link(const std::string& src, const std::string& dst,
                             Locality locality) const;

  // Price per byte from src to dst region. Symmetric unless both directions are
  // configured; 0 when unconfigured (including the diagonal).
  double egress_price(const std::string& src_region, const std::string& dst_region) const;

  // Throws ConsistencyError / SchemaError on dangling references or bad values.
  void validate() const;
};

struct Replica {
  std::string gpu_type;
  int tp = 1;
  // Region the replica runs in; empty means the stage's region.
  std::string region;

  friend bool operator==(const Replica&, const Replica&) = default;
};

struct StageAssignment {
  int first_layer = 0;
  int layer_count = 0;
  std::string region;
  std::vector<Replica> replicas;

  friend bool operator==(const StageAssignment&, const StageAssignment&) = default;
};

struct Plan {
  int mbs = 1;
  int dp_degree = 1;
  std::vector<StageAssignment> stages;

  int num_stages() const { return static_cast<int>(stages.size()); }
  // Microbatches per pipeline per iteration; 0 when D*mbs does not divide gbs.
  int64_t num_microbatches(const JobSpec& job) const;
  int total_gpus(const ClusterSpec& cluster) const;

  friend bool operator==(const Plan&, const Plan&) = default;
};

// Sorts replicas by (gpu_type, tp, region) inside every stage so that equal
// plans compare and serialize identically.
Plan canonical(Plan plan);
// Strict weak ordering over canonical plans, used for deterministic tie-breaking.
bool plan_less(const Plan& a, const Plan& b);

// Replicas of a stage that use `tp` GPUs each and that a node of `gpu` can host.
int replicas_per_node(const GpuTypeSpec& gpu, int tp);
// Nodes of each GPU type a stage occupies under the node-packing rule; replicas
// of different stages never share a node.
std::map<std::string, int> stage_node_demand(const StageAssignment& stage,
                                             const ClusterSpec& cluster);
// Node demand of the whole plan keyed by (gpu_type, region).
ResourcePool plan_node_demand(const Plan& plan, const ClusterSpec& cluster);

enum class ViolationCode {
  kNoStages,
  kBadDataParallelism,
  kLayerCoverage,
  kReplicaCount,
  kUnknownGpuType,
  kUnknownRegion,
  kBadTpDegree,
  kTpExceedsNode,
  kMixedTp,
  kStageCrossesRegion,
  kMicrobatchNotAllowed,
  kBatchNotDivisible,
  kInsufficientNodes,
};

const char* to_string(ViolationCode code);

struct Violation {
  ViolationCode code;
  std::string message;
};

std::vector<Violation> validate_plan(const Plan& plan, const JobSpec& job,
                                     const ClusterSpec& cluster);

// Node demand is checked against `pool` instead of the cluster's full availability.
std::vector<Violation> validate_plan(const Plan& plan, const JobSpec& job,
                                     const ClusterSpec& cluster, const ResourcePool& pool);

enum class Objective { kMaxThroughput, kMinCostPerIteration };

const char* to_string(Objective objective);

struct Budget {
  double max_cost_per_iteration = 0.0;
};
struct MinThroughput {
  double iterations_per_second = 0.0;
};

struct SearchRequest {
  Objective objective = Objective::kMaxThroughput;
  std::optional<Budget> budget;
  std::optional<MinThroughput> min_throughput;
  // Maximum claimable nodes; empty means "everything available".
  std::optional<ResourcePool> quotas;
};

// (stage, replica, tp rank), ordered lexicographically.
struct WorkerId {
  int stage = 0;
  int replica = 0;
  int rank = 0;

  friend auto operator<=>(const WorkerId&, const WorkerId&) = default;
};

std::string to_string(const WorkerId& id);

struct SimReport {
  double t_iter = 0.0;
  std::vector<double> t_pipeline;  // one per data-parallel pipeline
  double t_sync = 0.0;
  double t_update = 0.0;
  int straggler_stage = 0;
  double t_straggler = 0.0;
  std::map<WorkerId, int64_t> peak_mem;
  bool oom = false;
  std::vector<WorkerId> oom_offenders;
  double c_comp = 0.0;
  double c_comm = 0.0;
  double c_iter = 0.0;

  double throughput() const { return t_iter > 0.0 ? 1.0 / t_iter : 0.0; }
};

}  // namespace hetplan
