#include "hetplan/profiles.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "json_util.hpp"

namespace hetplan {

using detail::json;

ProfileStore::ProfileStore(std::vector<LayerProfile> layers) : layers_(std::move(layers)) {}

const LayerRecord* ProfileStore::find(int layer, const std::string& gpu_type, int tp, int mbs) const {
  if (layer < 0 || layer >= static_cast<int>(layers_.size())) return nullptr;
  const auto& records = layers_[static_cast<size_t>(layer)].records;
  auto it = records.find(RecordKey{gpu_type, tp, mbs});
  return it == records.end() ? nullptr : &it->second;
}

std::set<int> ProfileStore::tp_degrees(const std::string& gpu_type) const {
  std::set<int> out;
  for (const auto& l : layers_) {
    for (const auto& [key, rec] : l.records) {
      if (key.gpu_type == gpu_type) out.insert(key.tp);
    }
  }
  return out;
}

void ProfileStore::validate() const {
  for (size_t i = 0; i < layers_.size(); ++i) {
    const auto& layer = layers_[i];
    const std::string where = "layer '" + layer.layer_id + "'";
    int64_t unsharded = -1;
    for (const auto& [key, rec] : layer.records) {
      const std::string at = where + " (" + key.gpu_type + ", tp=" + std::to_string(key.tp) +
                             ", mbs=" + std::to_string(key.mbs) + ")";
      if (key.tp < 1 || key.mbs < 1) throw ConsistencyError(at + ": tp and mbs must be >= 1");
      if (rec.t_fwd < 0 || rec.t_bwd < 0 || rec.t_update < 0) {
        throw ConsistencyError(at + ": negative time");
      }
      if (rec.params < 0 || rec.act_out_bytes < 0 || rec.act_intermediate_bytes < 0) {
        throw ConsistencyError(at + ": negative size");
      }
      if (key.tp == 1) {
        if (unsharded >= 0 && unsharded != rec.params) {
          throw ConsistencyError(at + ": params differ across tp=1 records");
        }
        unsharded = rec.params;
      }
    }
    if (unsharded < 0) continue;
    for (const auto& [key, rec] : layer.records) {
      const int64_t expect = (unsharded + key.tp - 1) / key.tp;
      if (rec.params != expect) {
        throw ConsistencyError(where + " (" + key.gpu_type + ", tp=" + std::to_string(key.tp) +
                               "): params " + std::to_string(rec.params) + " != ceil(" +
                               std::to_string(unsharded) + "/tp)");
      }
    }
  }
}

const LayerRecord& lookup_layer(const ProfileStore& store, int layer, const std::string& gpu_type,
                                int tp, int mbs) {
  if (const auto* rec = store.find(layer, gpu_type, tp, mbs)) return *rec;
  throw MissingProfile(gpu_type, tp, mbs, "layer " + std::to_string(layer));
}

namespace {

LayerRecord parse_record(const json& j, const std::string& path) {
  using namespace detail;
  LayerRecord r;
  r.t_fwd = get_double(j, "t_fwd", path);
  r.t_bwd = get_double(j, "t_bwd", path);
  r.t_update = get_double(j, "t_update", path);
  r.params = get_int64(j, "params", path);
  r.act_out_bytes = get_int64(j, "act_out_bytes", path);
  r.act_intermediate_bytes = get_int64(j, "act_intermediate_bytes", path);
  if (r.t_fwd < 0) throw ConsistencyError(child(path, "t_fwd") + ": negative time");
  if (r.t_bwd < 0) throw ConsistencyError(child(path, "t_bwd") + ": negative time");
  if (r.t_update < 0) throw ConsistencyError(child(path, "t_update") + ": negative time");
  return r;
}

}  // namespace

JobProfile load_job_profile(std::istream& in) {
  using namespace detail;
  const json root = parse_json(in);
  const std::string p;
  JobProfile out;
  JobSpec& job = out.job;
  job.model_name = get_string(root, "model", p);
  job.global_batch_size = get_int64(root, "gbs", p);
  job.sequence_length = get_int64(root, "seq_len", p);
  job.data_type_size = get_int(root, "data_type_size", p);
  job.optimizer_mul_factor = get_double(root, "mul_factor", p);

  std::vector<LayerProfile> layers;
  std::set<int> seen_mbs;
  const json& jl = require_array(root, "layers", p);
  for (size_t i = 0; i < jl.size(); ++i) {
    const std::string lp = child("/layers", i);
    LayerProfile lprof;
    LayerRef ref;
    ref.id = get_string(jl[i], "id", lp);
    ref.repeat = jl[i].contains("repeat") ? get_int(jl[i], "repeat", lp) : 1;
    lprof.layer_id = ref.id;
    const json& jr = require_array(jl[i], "records", lp);
    for (size_t k = 0; k < jr.size(); ++k) {
      const std::string rp = child(child(lp, "records"), k);
      RecordKey key{get_string(jr[k], "gpu_type", rp), get_int(jr[k], "tp", rp),
                    get_int(jr[k], "mbs", rp)};
      if (key.tp < 1) throw SchemaError(child(rp, "tp"), "must be >= 1");
      if (key.mbs < 1) throw SchemaError(child(rp, "mbs"), "must be >= 1");
      seen_mbs.insert(key.mbs);
      if (!lprof.records.emplace(key, parse_record(jr[k], rp)).second) {
        throw ConsistencyError(rp + ": duplicate record");
      }
    }
    job.layers.push_back(std::move(ref));
    layers.push_back(std::move(lprof));
  }

  if (root.contains("mbs")) {
    const json& jm = require_array(root, "mbs", p);
    job.allowed_microbatch_sizes.clear();
    for (size_t i = 0; i < jm.size(); ++i) {
      job.allowed_microbatch_sizes.push_back(as_int(jm[i], child("/mbs", i)));
    }
  } else {
    job.allowed_microbatch_sizes.assign(seen_mbs.begin(), seen_mbs.end());
  }

  job.validate();
  out.store = ProfileStore(std::move(layers));
  out.store.validate();
  return out;
}

JobProfile load_job_profile_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return load_job_profile(in);
}

void save_job_profile(std::ostream& out, const JobSpec& job, const ProfileStore& store) {
  json root;
  root["model"] = job.model_name;
  root["gbs"] = job.global_batch_size;
  root["seq_len"] = job.sequence_length;
  root["data_type_size"] = job.data_type_size;
  root["mul_factor"] = job.optimizer_mul_factor;
  root["mbs"] = job.allowed_microbatch_sizes;
  json layers = json::array();
  for (size_t i = 0; i < job.layers.size(); ++i) {
    json jl;
    jl["id"] = job.layers[i].id;
    jl["repeat"] = job.layers[i].repeat;
    json records = json::array();
    if (i < store.layers().size()) {
      for (const auto& [key, r] : store.layers()[i].records) {
        records.push_back({{"gpu_type", key.gpu_type},
                           {"tp", key.tp},
                           {"mbs", key.mbs},
                           {"t_fwd", r.t_fwd},
                           {"t_bwd", r.t_bwd},
                           {"t_update", r.t_update},
                           {"params", r.params},
                           {"act_out_bytes", r.act_out_bytes},
                           {"act_intermediate_bytes", r.act_intermediate_bytes}});
      }
    }
    jl["records"] = std::move(records);
    layers.push_back(std::move(jl));
  }
  root["layers"] = std::move(layers);
  out << root.dump(2) << "\n";
}

namespace {

void check_positive_over_range(const BandwidthModel& m, const std::string& path) {
  constexpr int kGrid = 64;
  const double lo = std::log2(m.min_bytes);
  const double hi = std::log2(m.max_bytes);
  for (int i = 0; i < kGrid; ++i) {
    const double x = lo + (hi - lo) * i / (kGrid - 1);
    if (!(m.bandwidth(std::exp2(x)) > 0)) {
      throw ConsistencyError(path + ": bandwidth not positive over valid_range");
    }
  }
}

}  // namespace

ClusterSpec load_cluster(std::istream& in) {
  using namespace detail;
  const json root = parse_json(in);
  const std::string p;
  ClusterSpec c;

  const json& jg = require_array(root, "gpu_types", p);
  for (size_t i = 0; i < jg.size(); ++i) {
    const std::string gp = child("/gpu_types", i);
    GpuTypeSpec g;
    g.name = get_string(jg[i], "name", gp);
    g.mem_bytes = get_int64(jg[i], "mem_bytes", gp);
    g.gpus_per_node = get_int(jg[i], "gpus_per_node", gp);
    g.price_per_gpu_hour = get_double(jg[i], "price_per_gpu_hour", gp);
    if (g.mem_bytes <= 0) throw SchemaError(child(gp, "mem_bytes"), "must be > 0");
    if (g.gpus_per_node < 1) throw SchemaError(child(gp, "gpus_per_node"), "must be >= 1");
    if (g.price_per_gpu_hour < 0) throw SchemaError(child(gp, "price_per_gpu_hour"), "must be >= 0");
    c.gpu_types.push_back(std::move(g));
  }
  std::sort(c.gpu_types.begin(), c.gpu_types.end(),
            [](const GpuTypeSpec& a, const GpuTypeSpec& b) { return a.name < b.name; });

  const json& jz = require_array(root, "zones", p);
  for (size_t i = 0; i < jz.size(); ++i) {
    const std::string zp = child("/zones", i);
    c.zones.push_back({get_string(jz[i], "name", zp), get_string(jz[i], "region", zp)});
  }

  const json& ja = require_array(root, "availability", p);
  for (size_t i = 0; i < ja.size(); ++i) {
    const std::string ap = child("/availability", i);
    const auto type = get_string(ja[i], "gpu_type", ap);
    const auto zone = get_string(ja[i], "zone", ap);
    const int nodes = get_int(ja[i], "nodes", ap);
    if (nodes < 0) throw SchemaError(child(ap, "nodes"), "must be >= 0");
    if (!c.find_gpu(type)) throw SchemaError(child(ap, "gpu_type"), "unknown gpu type '" + type + "'");
    if (!c.region_of(zone)) throw SchemaError(child(ap, "zone"), "unknown zone '" + zone + "'");
    c.availability[{type, zone}] += nodes;
  }

  if (root.contains("links")) {
    const json& jk = require_array(root, "links", p);
    for (size_t i = 0; i < jk.size(); ++i) {
      const std::string kp = child("/links", i);
      LinkKey key;
      key.src = get_string(jk[i], "src", kp);
      key.dst = get_string(jk[i], "dst", kp);
      const auto loc_text = get_string(jk[i], "locality", kp);
      auto loc = parse_locality(loc_text);
      if (!loc) throw SchemaError(child(kp, "locality"), "unknown locality '" + loc_text + "'");
      key.locality = *loc;

      BandwidthModel model;
      if (jk[i].contains("samples")) {
        const json& js = require_array(jk[i], "samples", kp);
        std::vector<BandwidthSample> samples;
        for (size_t s = 0; s < js.size(); ++s) {
          const std::string sp = child(child(kp, "samples"), s);
          if (!js[s].is_array() || js[s].size() != 2) throw SchemaError(sp, "expected [bytes, seconds]");
          samples.push_back({as_double(js[s][0], child(sp, 0)), as_double(js[s][1], child(sp, 1))});
        }
        const int degree = jk[i].contains("degree") ? get_int(jk[i], "degree", kp)
                                                    : kDefaultBandwidthDegree;
        model = fit_bandwidth(samples, degree).model;
      } else {
        const json& jc = require_array(jk[i], "coefficients", kp);
        if (jc.empty()) throw SchemaError(child(kp, "coefficients"), "must not be empty");
        for (size_t s = 0; s < jc.size(); ++s) {
          model.coefficients.push_back(as_double(jc[s], child(child(kp, "coefficients"), s)));
        }
        const json& jv = require_array(jk[i], "valid_range", kp);
        if (jv.size() != 2) throw SchemaError(child(kp, "valid_range"), "expected [min, max]");
        model.min_bytes = as_double(jv[0], child(child(kp, "valid_range"), 0));
        model.max_bytes = as_double(jv[1], child(child(kp, "valid_range"), 1));
      }
      if (jk[i].contains("valid_range") && jk[i].contains("samples")) {
        const json& jv = require_array(jk[i], "valid_range", kp);
        if (jv.size() != 2) throw SchemaError(child(kp, "valid_range"), "expected [min, max]");
        model.min_bytes = as_double(jv[0], child(child(kp, "valid_range"), 0));
        model.max_bytes = as_double(jv[1], child(child(kp, "valid_range"), 1));
      }
      if (!(model.min_bytes > 0) || model.max_bytes < model.min_bytes) {
        throw SchemaError(child(kp, "valid_range"), "needs 0 < min <= max");
      }
      check_positive_over_range(model, kp);
      c.links[key] = std::move(model);
    }
  }

  if (root.contains("egress")) {
    const json& je = require_array(root, "egress", p);
    for (size_t i = 0; i < je.size(); ++i) {
      const std::string ep = child("/egress", i);
      const double price = get_double(je[i], "price_per_byte", ep);
      if (price < 0) throw SchemaError(child(ep, "price_per_byte"), "must be >= 0");
      c.egress[{get_string(je[i], "src_region", ep), get_string(je[i], "dst_region", ep)}] = price;
    }
  }

  c.validate();
  return c;
}

ClusterSpec load_cluster_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return load_cluster(in);
}

void save_cluster(std::ostream& out, const ClusterSpec& c) {
  json root;
  json gpus = json::array();
  for (const auto& g : c.gpu_types) {
    gpus.push_back({{"name", g.name},
                    {"mem_bytes", g.mem_bytes},
                    {"gpus_per_node", g.gpus_per_node},
                    {"price_per_gpu_hour", g.price_per_gpu_hour}});
  }
  root["gpu_types"] = std::move(gpus);
  json zones = json::array();
  for (const auto& z : c.zones) zones.push_back({{"name", z.name}, {"region", z.region}});
  root["zones"] = std::move(zones);
  json avail = json::array();
  for (const auto& [key, nodes] : c.availability) {
    avail.push_back({{"gpu_type", key.first}, {"zone", key.second}, {"nodes", nodes}});
  }
  root["availability"] = std::move(avail);
  json links = json::array();
  for (const auto& [key, m] : c.links) {
    links.push_back({{"src", key.src},
                     {"dst", key.dst},
                     {"locality", to_string(key.locality)},
                     {"coefficients", m.coefficients},
                     {"valid_range", {m.min_bytes, m.max_bytes}}});
  }
  root["links"] = std::move(links);
  json egress = json::array();
  for (const auto& [key, price] : c.egress) {
    egress.push_back({{"src_region", key.first}, {"dst_region", key.second}, {"price_per_byte", price}});
  }
  root["egress"] = std::move(egress);
  out << root.dump(2) << "\n";
}

namespace {

// Linear ramp in log2(bytes) from half of `peak` at min_bytes to `peak` at max_bytes.
BandwidthModel ramp_model(double peak_bytes_per_second) {
  constexpr double kMinBytes = 1024.0;
  constexpr double kMaxBytes = double(int64_t{1} << 30);
  const double x0 = std::log2(kMinBytes);
  const double x1 = std::log2(kMaxBytes);
  const double slope = 0.5 * peak_bytes_per_second / (x1 - x0);
  return BandwidthModel{{0.5 * peak_bytes_per_second - slope * x0, slope}, kMinBytes, kMaxBytes};
}

}  // namespace

SyntheticInstance gen_synthetic_profile(const SyntheticParams& sp) {
  if (sp.num_layers < 1 || sp.distinct_layers < 1 || sp.distinct_layers > sp.num_layers ||
      sp.hidden < 1 || sp.sequence_length < 1 || sp.global_batch_size < 1 || sp.data_type_size < 1 ||
      !(sp.mul_factor > 0) || !(sp.seconds_per_flop > 0) || sp.gpus.empty() ||
      sp.microbatch_sizes.empty() || sp.tp_degrees.empty() || sp.jitter < 0 || sp.jitter >= 1) {
    throw ConsistencyError("synthetic generator parameters must be positive");
  }
  for (const auto& g : sp.gpus) {
    if (!(g.time_scale > 0) || g.mem_bytes <= 0 || g.gpus_per_node < 1 || g.price_per_gpu_hour < 0) {
      throw ConsistencyError("synthetic gpu '" + g.name + "' has non-positive parameters");
    }
  }

  SyntheticInstance out;
  JobSpec& job = out.job;
  job.model_name = sp.model_name;
  job.global_batch_size = sp.global_batch_size;
  job.sequence_length = sp.sequence_length;
  job.data_type_size = sp.data_type_size;
  job.optimizer_mul_factor = sp.mul_factor;
  job.allowed_microbatch_sizes = sp.microbatch_sizes;
  std::sort(job.allowed_microbatch_sizes.begin(), job.allowed_microbatch_sizes.end());

  std::mt19937_64 rng(sp.seed);
  std::uniform_real_distribution<double> noise(-1.0, 1.0);

  const int64_t h = sp.hidden;
  const int64_t s = sp.sequence_length;
  const int64_t params = 12 * h * h + 13 * h;
  const double fwd_flops_per_sample = 2.0 * double(params) * double(s) + 4.0 * double(s) * double(s) * double(h);
  constexpr double kUpdateSecondsPerParam = 2e-11;

  std::vector<LayerProfile> layers;
  for (int k = 0; k < sp.distinct_layers; ++k) {
    const int repeat = sp.num_layers / sp.distinct_layers + (k < sp.num_layers % sp.distinct_layers ? 1 : 0);
    const double layer_scale = 1.0 + sp.jitter * noise(rng);
    LayerRef ref{"layer" + std::to_string(k), repeat};
    LayerProfile prof;
    prof.layer_id = ref.id;
    for (const auto& g : sp.gpus) {
      for (int tp : sp.tp_degrees) {
        if (tp < 1) throw ConsistencyError("synthetic tp degrees must be >= 1");
        if (tp > g.gpus_per_node && !sp.include_cross_node_tp) continue;
        for (int mbs : job.allowed_microbatch_sizes) {
          LayerRecord r;
          r.t_fwd = fwd_flops_per_sample * mbs / tp * sp.seconds_per_flop * g.time_scale * layer_scale;
          r.t_bwd = 2.0 * r.t_fwd;
          r.t_update = double(params) / tp * kUpdateSecondsPerParam * g.time_scale;
          r.params = (params + tp - 1) / tp;
          r.act_out_bytes = s * mbs * h * sp.data_type_size;
          r.act_intermediate_bytes = s * mbs * h * 10 + (s * mbs * h * 24 + tp - 1) / tp;
          prof.records.emplace(RecordKey{g.name, tp, mbs}, r);
        }
      }
    }
    job.layers.push_back(std::move(ref));
    layers.push_back(std::move(prof));
  }
  out.store = ProfileStore(std::move(layers));

  ClusterSpec& c = out.cluster;
  for (const auto& g : sp.gpus) {
    c.gpu_types.push_back({g.name, g.mem_bytes, g.gpus_per_node, g.price_per_gpu_hour});
  }
  std::sort(c.gpu_types.begin(), c.gpu_types.end(),
            [](const GpuTypeSpec& a, const GpuTypeSpec& b) { return a.name < b.name; });
  for (const auto& z : sp.zones) {
    c.zones.push_back({z.name, z.region});
    for (const auto& [type, nodes] : z.nodes) c.availability[{type, z.name}] += nodes;
  }
  constexpr double kGB = 1e9;
  c.links[{kAnyGpuType, kAnyGpuType, Locality::kIntraNode}] = ramp_model(sp.intra_node_gbps * kGB);
  c.links[{kAnyGpuType, kAnyGpuType, Locality::kIntraZone}] = ramp_model(sp.intra_zone_gbps * kGB);
  c.links[{kAnyGpuType, kAnyGpuType, Locality::kInterRegion}] = ramp_model(sp.inter_region_gbps * kGB);
  const auto regions = c.regions();
  for (size_t a = 0; a < regions.size(); ++a) {
    for (size_t b = a + 1; b < regions.size(); ++b) {
      c.egress[{regions[a], regions[b]}] = sp.egress_price_per_gb / kGB;
    }
  }

  job.validate();
  out.store.validate();
  c.validate();
  return out;
}

SyntheticParams synthetic_preset(const std::string& name) {
  SyntheticParams p;
  constexpr int64_t kGiB = int64_t{1} << 30;
  p.gpus = {
      {"A100-40", 40 * kGiB, 8, 3.67, 1.0},
      {"V100-16", 16 * kGiB, 8, 2.48, 2.0},
  };
  p.zones = {
      {"us-central1-a", "us-central1", {{"A100-40", 2}, {"V100-16", 2}}},
      {"us-central1-b", "us-central1", {{"A100-40", 1}, {"V100-16", 2}}},
      {"europe-west4-a", "europe-west4", {{"A100-40", 1}, {"V100-16", 2}}},
  };
  if (name == "opt350-like") {
    p.model_name = "opt350-like";
    p.num_layers = 24;
    p.hidden = 1024;
  } else if (name == "gptneo-like") {
    p.model_name = "gptneo-like";
    p.num_layers = 32;
    p.hidden = 2560;
  } else {
    throw ConsistencyError("unknown preset '" + name + "'");
  }
  return p;
}

}  // namespace hetplan
