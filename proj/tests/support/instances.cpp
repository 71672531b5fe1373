#include "support/instances.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace hetplan::testing {

namespace {

constexpr int64_t kMiB = int64_t{1} << 20;
constexpr int64_t kGiB = int64_t{1} << 30;

BandwidthModel random_link(std::mt19937_64& rng, double lo_gbps, double hi_gbps) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double peak = (lo_gbps + (hi_gbps - lo_gbps) * u(rng)) * 1e9;
  BandwidthModel m;
  m.min_bytes = 1024.0;
  m.max_bytes = double(kGiB);
  if (u(rng) < 0.5) {
    m.coefficients = {peak};
  } else {
    // Increasing ramp in log2(bytes): bandwidth goes from peak/10 at 1 KiB to peak at 1 GiB.
    const double slope = (peak - peak / 10.0) / 20.0;
    m.coefficients = {peak / 10.0 - 10.0 * slope, slope};
  }
  return m;
}

}  // namespace

SyntheticInstance random_instance(uint64_t seed, const RandomInstanceOptions& opt) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  SyntheticInstance out;
  JobSpec& job = out.job;
  job.model_name = "random-" + std::to_string(seed);
  job.data_type_size = 2;
  job.optimizer_mul_factor = std::vector<double>{4.0, 8.0, 12.0}[static_cast<size_t>(pick(0, 2))];
  job.sequence_length = 512;
  job.global_batch_size = std::vector<int64_t>{2, 4, 8}[static_cast<size_t>(pick(0, 2))];
  const std::vector<int> mbs_grid{1, 2, 4};
  job.allowed_microbatch_sizes.clear();
  for (int m : mbs_grid) {
    if (m <= job.global_batch_size && (m == 1 || u(rng) < 0.6)) job.allowed_microbatch_sizes.push_back(m);
  }

  const int total_layers = pick(1, opt.max_layers);
  const int distinct = pick(1, total_layers);
  for (int k = 0; k < distinct; ++k) {
    const int repeat = total_layers / distinct + (k < total_layers % distinct ? 1 : 0);
    job.layers.push_back({"l" + std::to_string(k), repeat});
  }

  const int num_types = pick(1, opt.max_types);
  const std::vector<std::string> type_names{"A", "V"};
  struct TypeInfo {
    std::string name;
    int gpn;
    double speed;
    double tp_efficiency;
  };
  std::vector<TypeInfo> types;
  for (int g = 0; g < num_types; ++g) {
    types.push_back({type_names[static_cast<size_t>(g)], std::vector<int>{1, 2, 4}[static_cast<size_t>(pick(0, 2))],
                     0.5 + 2.5 * u(rng), 0.6 + 0.4 * u(rng)});
  }

  std::vector<LayerProfile> layers;
  int64_t max_stage_params = 0;
  for (int k = 0; k < distinct; ++k) {
    LayerProfile prof;
    prof.layer_id = job.layers[static_cast<size_t>(k)].id;
    const double base = 1e-3 * (1.0 + 9.0 * u(rng));
    const int64_t params = int64_t(1e6 * (1.0 + 99.0 * u(rng)));
    const int64_t act = int64_t(double(kMiB) * (1.0 + 63.0 * u(rng)));
    const int64_t out_act = int64_t(double(kMiB) * (0.25 + 7.75 * u(rng)));
    max_stage_params += params * job.layers[static_cast<size_t>(k)].repeat;
    for (const auto& t : types) {
      std::vector<int> tps;
      for (int tp = 1; tp <= t.gpn; tp *= 2) tps.push_back(tp);
      if (opt.cross_node_tp) tps.push_back(2 * t.gpn);
      for (int tp : tps) {
        for (int mbs : job.allowed_microbatch_sizes) {
          if (u(rng) < opt.missing_profile_rate) continue;
          LayerRecord r;
          const double speedup = double(tp) * std::pow(t.tp_efficiency, std::log2(double(tp)));
          r.t_fwd = base * t.speed * mbs / speedup * (0.9 + 0.2 * u(rng));
          r.t_bwd = r.t_fwd * (1.8 + 0.4 * u(rng));
          r.t_update = 1e-9 * double(params) / tp * t.speed;
          r.params = (params + tp - 1) / tp;
          r.act_out_bytes = out_act * mbs;
          r.act_intermediate_bytes = (act * mbs + tp - 1) / tp;
          prof.records.emplace(RecordKey{t.name, tp, mbs}, r);
        }
      }
    }
    layers.push_back(std::move(prof));
  }
  out.store = ProfileStore(std::move(layers));

  ClusterSpec& c = out.cluster;
  // Memory around the size of the whole model at tp=1, so that small stages fit
  // and large ones need sharding or more stages.
  const double model = double(max_stage_params) * job.optimizer_mul_factor * job.data_type_size;
  for (const auto& t : types) {
    const double mem = model * (0.15 + 1.2 * u(rng)) * opt.memory_scale + double(64 * kMiB);
    c.gpu_types.push_back({t.name, int64_t(mem), t.gpn, std::round(100.0 * (0.5 + 4.0 * u(rng))) / 100.0});
  }

  const int num_regions = pick(1, opt.max_regions);
  const std::vector<std::string> region_names{"east", "west"};
  std::vector<std::string> zones;
  for (int r = 0; r < num_regions; ++r) {
    const auto& region = region_names[static_cast<size_t>(r)];
    const int nz = pick(1, 2);
    for (int z = 0; z < nz; ++z) {
      const std::string name = region + "-" + std::string(1, char('a' + z));
      c.zones.push_back({name, region});
      zones.push_back(name);
    }
  }
  int budget = pick(1, opt.max_nodes);
  for (int g = 0; g < num_types && budget > 0; ++g) {
    const int n_type = g + 1 == num_types ? budget : pick(1, budget);
    int left = n_type;
    for (size_t z = 0; z < zones.size() && left > 0; ++z) {
      const int n = z + 1 == zones.size() ? left : pick(0, left);
      if (n > 0) c.availability[{types[static_cast<size_t>(g)].name, zones[z]}] += n;
      left -= n;
    }
    budget -= n_type;
  }

  c.links[{kAnyGpuType, kAnyGpuType, Locality::kIntraNode}] = random_link(rng, 50.0, 300.0);
  c.links[{kAnyGpuType, kAnyGpuType, Locality::kIntraZone}] = random_link(rng, 5.0, 50.0);
  c.links[{kAnyGpuType, kAnyGpuType, Locality::kInterRegion}] = random_link(rng, 0.5, 5.0);
  if (num_types == 2 && u(rng) < 0.5) {
    c.links[{"A", "V", Locality::kIntraZone}] = random_link(rng, 2.0, 20.0);
  }
  if (num_regions == 2) {
    c.egress[{"east", "west"}] = (0.01 + 0.1 * u(rng)) / 1e9;
    if (u(rng) < 0.5) c.egress[{"west", "east"}] = (0.01 + 0.1 * u(rng)) / 1e9;
  }

  job.validate();
  out.store.validate();
  c.validate();
  return out;
}

SyntheticInstance tight_memory_instance(uint64_t seed) {
  RandomInstanceOptions opt;
  opt.memory_scale = 0.25;
  opt.missing_profile_rate = 0.0;
  return random_instance(seed, opt);
}

SyntheticInstance opt350_cluster(int num_types, bool cross_node_tp) {
  auto p = synthetic_preset("opt350-like");
  if (cross_node_tp) {
    p.tp_degrees = {1, 2, 4, 8, 16, 32};
    p.include_cross_node_tp = true;
  }
  if (num_types == 1) {
    p.gpus.resize(1);
    p.zones = {{"us-central1-a", "us-central1", {{p.gpus[0].name, 16}}}};
  } else {
    p.zones = {{"us-central1-a", "us-central1", {{p.gpus[0].name, 16}, {p.gpus[1].name, 16}}}};
  }
  return gen_synthetic_profile(p);
}

SyntheticInstance two_zone_instance() {
  auto p = synthetic_preset("opt350-like");
  p.zones = {
      {"us-central1-a", "us-central1", {{"A100-40", 4}, {"V100-16", 2}}},
      {"us-central1-b", "us-central1", {{"A100-40", 2}, {"V100-16", 2}}},
      {"europe-west4-a", "europe-west4", {{"V100-16", 2}}},
  };
  return gen_synthetic_profile(p);
}

}  // namespace hetplan::testing
