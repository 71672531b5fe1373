#pragma once

// Small hand-built fixtures for closed-form checks.

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <random>
#include <string>
#include <vector>

#include "hetplan/domain.hpp"
#include "hetplan/profiles.hpp"

namespace hetplan::testing {

inline LayerRecord record(double t_fwd, double t_bwd, double t_update, int64_t params, int64_t act_out,
                          int64_t act_intermediate) {
  LayerRecord r;
  r.t_fwd = t_fwd;
  r.t_bwd = t_bwd;
  r.t_update = t_update;
  r.params = params;
  r.act_out_bytes = act_out;
  r.act_intermediate_bytes = act_intermediate;
  return r;
}

// Job of `layers` distinct layers (repeat 1 each) and the matching empty profiles.
struct Fixture {
  JobSpec job;
  std::vector<LayerProfile> layers;
  ClusterSpec cluster;

  ProfileStore store() const { return ProfileStore(layers); }

  void add(int layer, const std::string& gpu, int tp, int mbs, const LayerRecord& r) {
    layers[static_cast<size_t>(layer)].records[RecordKey{gpu, tp, mbs}] = r;
  }
  // Same record for every layer.
  void add_all(const std::string& gpu, int tp, int mbs, const LayerRecord& r) {
    for (size_t k = 0; k < layers.size(); ++k) add(static_cast<int>(k), gpu, tp, mbs, r);
  }
  void gpu(const std::string& name, int64_t mem_bytes, int gpus_per_node, double price_per_gpu_hour) {
    cluster.gpu_types.push_back({name, mem_bytes, gpus_per_node, price_per_gpu_hour});
  }
  void zone(const std::string& name, const std::string& region) { cluster.zones.push_back({name, region}); }
  void nodes(const std::string& gpu, const std::string& zone, int n) { cluster.availability[{gpu, zone}] = n; }
  // Constant-bandwidth wildcard links, bytes per second.
  void links(double intra_node, double intra_zone, double inter_region) {
    cluster.links[{kAnyGpuType, kAnyGpuType, Locality::kIntraNode}] = BandwidthModel::constant(intra_node);
    cluster.links[{kAnyGpuType, kAnyGpuType, Locality::kIntraZone}] = BandwidthModel::constant(intra_zone);
    cluster.links[{kAnyGpuType, kAnyGpuType, Locality::kInterRegion}] = BandwidthModel::constant(inter_region);
  }
};

inline Fixture make_fixture(int num_layers, int64_t gbs, std::vector<int> mbs = {1}, double mul_factor = 8.0,
                            int data_type_size = 2) {
  Fixture f;
  f.job.model_name = "fixture";
  f.job.global_batch_size = gbs;
  f.job.sequence_length = 1;
  f.job.data_type_size = data_type_size;
  f.job.optimizer_mul_factor = mul_factor;
  f.job.allowed_microbatch_sizes = std::move(mbs);
  for (int k = 0; k < num_layers; ++k) {
    const std::string id = "l" + std::to_string(k);
    f.job.layers.push_back({id, 1});
    f.layers.push_back({id, {}});
  }
  return f;
}

inline StageAssignment stage(int first, int count, const std::string& region,
                             std::initializer_list<Replica> replicas) {
  return {first, count, region, std::vector<Replica>(replicas)};
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("hetplan-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  std::string write(const std::string& name, const std::string& text) const {
    const auto p = file(name);
    std::ofstream(p) << text;
    return p;
  }

 private:
  std::filesystem::path path_;
};

}  // namespace hetplan::testing
