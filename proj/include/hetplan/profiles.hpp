#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "hetplan/domain.hpp"

namespace hetplan {

// Profiled costs of one layer at one (gpu_type, tp, mbs) point.
struct LayerRecord {
  double t_fwd = 0.0;
  double t_bwd = 0.0;
  double t_update = 0.0;
  int64_t params = 0;  // per TP shard
  int64_t act_out_bytes = 0;           // output activation per microbatch (full tensor)
  int64_t act_intermediate_bytes = 0;  // stored intermediates per microbatch

  friend bool operator==(const LayerRecord&, const LayerRecord&) = default;
};

struct RecordKey {
  std::string gpu_type;
  int tp = 1;
  int mbs = 1;

  friend auto operator<=>(const RecordKey&, const RecordKey&) = default;
};

struct LayerProfile {
  std::string layer_id;
  std::map<RecordKey, LayerRecord> records;

  friend bool operator==(const LayerProfile&, const LayerProfile&) = default;
};

// Per-layer profiles, one entry per distinct JobSpec layer (in the same order).
class ProfileStore {
 public:
  ProfileStore() = default;
  explicit ProfileStore(std::vector<LayerProfile> layers);

  const std::vector<LayerProfile>& layers() const { return layers_; }
  // Exact-match lookup by distinct-layer index; nullptr when absent.
  const LayerRecord* find(int layer, const std::string& gpu_type, int tp, int mbs) const;
  // Sorted tp degrees with at least one record for `gpu_type`.
  std::set<int> tp_degrees(const std::string& gpu_type) const;

  // Throws ConsistencyError on negative values or sharding mismatches.
  void validate() const;

  friend bool operator==(const ProfileStore&, const ProfileStore&) = default;

 private:
  std::vector<LayerProfile> layers_;
};

// Throws MissingProfile when the exact (gpu_type, tp, mbs) point was not profiled.
const LayerRecord& lookup_layer(const ProfileStore& store, int layer, const std::string& gpu_type,
                                int tp, int mbs);

struct JobProfile {
  JobSpec job;
  ProfileStore store;
};

// Job profile JSON:
// {model, gbs, seq_len, data_type_size, mul_factor, [mbs:[...]],
//  layers:[{id, repeat, records:[{gpu_type, tp, mbs, t_fwd, t_bwd, t_update,
//                                  params, act_out_bytes, act_intermediate_bytes}]}]}
JobProfile load_job_profile(std::istream& in);
JobProfile load_job_profile_file(const std::string& path);
void save_job_profile(std::ostream& out, const JobSpec& job, const ProfileStore& store);

// Cluster JSON:
// {gpu_types:[{name, mem_bytes, gpus_per_node, price_per_gpu_hour}],
//  zones:[{name, region}], availability:[{gpu_type, zone, nodes}],
//  links:[{src, dst, locality, samples:[[bytes, seconds]...] [, degree] | coefficients, valid_range}],
//  egress:[{src_region, dst_region, price_per_byte}]}
ClusterSpec load_cluster(std::istream& in);
ClusterSpec load_cluster_file(const std::string& path);
void save_cluster(std::ostream& out, const ClusterSpec& cluster);

struct SyntheticGpu {
  std::string name;
  int64_t mem_bytes = 0;
  int gpus_per_node = 8;
  double price_per_gpu_hour = 0.0;
  double time_scale = 1.0;  // speed factor: multiplies every compute time
};

struct SyntheticZone {
  std::string name;
  std::string region;
  std::map<std::string, int> nodes;  // gpu type -> node count
};

struct SyntheticParams {
  std::string model_name = "synthetic";
  int num_layers = 24;
  int distinct_layers = 1;  // layers are split into this many identical groups
  int64_t hidden = 1024;
  int64_t sequence_length = 2048;
  int64_t global_batch_size = 256;
  int data_type_size = 2;
  double mul_factor = 8.0;
  std::vector<int> microbatch_sizes{1, 2, 4, 8};
  std::vector<int> tp_degrees{1, 2, 4, 8};  // degrees above a node's width are skipped
  bool include_cross_node_tp = false;       // keep degrees above node width (ablation runs)
  double seconds_per_flop = 1.0 / 100e12;   // compute speed of a time_scale=1 GPU
  double jitter = 0.0;                      // per-layer multiplicative noise amplitude
  uint64_t seed = 0;
  std::vector<SyntheticGpu> gpus;
  std::vector<SyntheticZone> zones;
  double intra_node_gbps = 100.0;
  double intra_zone_gbps = 10.0;
  double inter_region_gbps = 1.0;
  double egress_price_per_gb = 0.02;
};

struct SyntheticInstance {
  JobSpec job;
  ProfileStore store;
  ClusterSpec cluster;
};

// Deterministic analytic transformer-shaped profile: t_fwd is proportional to
// mbs/tp times the GPU's time_scale; params and activations are shape-derived.
SyntheticInstance gen_synthetic_profile(const SyntheticParams& params);

// Named shapes: "opt350-like" (24 identical layers) and "gptneo-like" (32
// identical layers), both with two GPU classes in two regions.
SyntheticParams synthetic_preset(const std::string& name);

}  // namespace hetplan
