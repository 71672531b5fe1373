#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "hetplan/bandwidth.hpp"
#include "hetplan/profiles.hpp"
#include "support/fixtures.hpp"
#include "support/instances.hpp"

using namespace hetplan;
using namespace hetplan::testing;

namespace {

const char* kMinimalJob = R"({
  "model": "tiny", "gbs": 4, "seq_len": 16, "data_type_size": 2, "mul_factor": 8,
  "layers": [{"id": "l0", "records": [
    {"gpu_type": "A", "tp": 1, "mbs": 1, "t_fwd": 0.001, "t_bwd": 0.002, "t_update": 0.0001,
     "params": 1000, "act_out_bytes": 64, "act_intermediate_bytes": 128}]}]
})";

std::string with_replaced(std::string text, const std::string& from, const std::string& to) {
  text.replace(text.find(from), from.size(), to);
  return text;
}

}  // namespace

TEST_CASE("load_job_profile reads a one-record fixture") {
  std::istringstream in(kMinimalJob);
  const auto jp = load_job_profile(in);
  REQUIRE(jp.store.layers().size() == 1);
  CHECK(jp.store.layers()[0].records.size() == 1);
  const auto& r = lookup_layer(jp.store, 0, "A", 1, 1);
  CHECK(r.t_fwd == 0.001);
  CHECK(r.params == 1000);
  CHECK(jp.job.allowed_microbatch_sizes == std::vector<int>{1});
}

TEST_CASE("load_job_profile rejects negative times") {
  std::istringstream in(with_replaced(kMinimalJob, "\"t_fwd\": 0.001", "\"t_fwd\": -1"));
  CHECK_THROWS_AS(load_job_profile(in), ConsistencyError);
}

TEST_CASE("load_job_profile reports the path of a missing field") {
  std::istringstream in(with_replaced(kMinimalJob, "\"params\": 1000, ", ""));
  try {
    load_job_profile(in);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(e.path() == "/layers/0/records/0/params");
  }
}

TEST_CASE("load_job_profile rejects malformed JSON") {
  std::istringstream in("{\"model\": ");
  CHECK_THROWS_AS(load_job_profile(in), ParseError);
}

TEST_CASE("synthetic profile and cluster round-trip through save and load") {
  for (const char* preset : {"opt350-like", "gptneo-like"}) {
    auto params = synthetic_preset(preset);
    params.jitter = 0.1;
    params.distinct_layers = 3;
    const auto inst = gen_synthetic_profile(params);
    std::stringstream job_io;
    save_job_profile(job_io, inst.job, inst.store);
    const auto jp = load_job_profile(job_io);
    CHECK(jp.job == inst.job);
    CHECK(jp.store == inst.store);

    std::stringstream cluster_io;
    save_cluster(cluster_io, inst.cluster);
    const auto c = load_cluster(cluster_io);
    CHECK(c.gpu_types == inst.cluster.gpu_types);
    CHECK(c.zones == inst.cluster.zones);
    CHECK(c.availability == inst.cluster.availability);
    CHECK(c.links == inst.cluster.links);
    CHECK(c.egress == inst.cluster.egress);
  }
}

TEST_CASE("random fixtures round-trip through save and load") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const auto inst = random_instance(seed);
    std::stringstream job_io;
    save_job_profile(job_io, inst.job, inst.store);
    const auto jp = load_job_profile(job_io);
    CHECK(jp.job == inst.job);
    CHECK(jp.store == inst.store);
    std::stringstream cluster_io;
    save_cluster(cluster_io, inst.cluster);
    const auto c = load_cluster(cluster_io);
    CHECK(c.links == inst.cluster.links);
    CHECK(c.availability == inst.cluster.availability);
  }
}

TEST_CASE("lookup_layer never fabricates a missing record") {
  std::istringstream in(kMinimalJob);
  const auto jp = load_job_profile(in);
  CHECK(jp.store.find(0, "A", 2, 1) == nullptr);
  CHECK_THROWS_AS(lookup_layer(jp.store, 0, "A", 2, 1), MissingProfile);
  CHECK_THROWS_AS(lookup_layer(jp.store, 0, "A", 1, 2), MissingProfile);
  CHECK_THROWS_AS(lookup_layer(jp.store, 0, "B", 1, 1), MissingProfile);
}

TEST_CASE("fit_bandwidth recovers an exact degree-2 generator") {
  const std::vector<double> c{2e9, 3e7, 4e5};
  std::vector<BandwidthSample> samples;
  for (int e = 10; e <= 30; ++e) {
    const double x = e;
    const double bw = c[0] + c[1] * x + c[2] * x * x;
    const double bytes = std::exp2(x);
    samples.push_back({bytes, bytes / bw});
  }
  const auto fit = fit_bandwidth(samples, 2);
  REQUIRE(fit.model.coefficients.size() == 3);
  for (size_t k = 0; k < 3; ++k) {
    CHECK(std::abs(fit.model.coefficients[k] - c[k]) <= 1e-9 * std::abs(c[k]));
  }
}

TEST_CASE("fit_bandwidth with degree 0 on constant bandwidth returns that bandwidth") {
  std::vector<BandwidthSample> samples;
  for (double bytes : {1e3, 1e5, 1e7, 1e9}) samples.push_back({bytes, bytes / 5e9});
  const auto fit = fit_bandwidth(samples, 0);
  REQUIRE(fit.model.coefficients.size() == 1);
  CHECK(fit.model.coefficients[0] == doctest::Approx(5e9).epsilon(1e-12));
}

TEST_CASE("fit_bandwidth with too few distinct sizes is degenerate") {
  const std::vector<BandwidthSample> two{{1e3, 1e-6}, {1e6, 1e-3}};
  CHECK_THROWS_AS(fit_bandwidth(two, 3), DegenerateFit);
  const std::vector<BandwidthSample> repeated{{1e3, 1e-6}, {1e3, 2e-6}, {1e3, 3e-6}, {1e3, 4e-6}};
  CHECK_THROWS_AS(fit_bandwidth(repeated, 2), DegenerateFit);
}

TEST_CASE("fit_bandwidth rejects non-positive samples") {
  const std::vector<BandwidthSample> bad{{1e3, 0.0}, {1e4, 1e-5}, {1e5, 1e-4}};
  CHECK_THROWS_AS(fit_bandwidth(bad, 1), ConsistencyError);
}

TEST_CASE("comm_time over a constant 1 GB/s link") {
  const auto m = BandwidthModel::constant(1e9);
  CHECK(comm_time(m, 1e9) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("comm_time clamps below the valid range") {
  BandwidthModel m;
  m.coefficients = {0.0, 1e8};  // bandwidth = 1e8 * log2(bytes)
  m.min_bytes = 1024.0;
  m.max_bytes = 1 << 30;
  const double at_min = m.bandwidth(1024.0);
  CHECK(at_min == doctest::Approx(1e9));
  CHECK(m.bandwidth(16.0) == at_min);
  CHECK(comm_time(m, 16.0) == doctest::Approx(16.0 / at_min));
  CHECK(m.bandwidth(double(1LL << 40)) == m.bandwidth(double(1 << 30)));
}

TEST_CASE("comm_time of a fitted ramp-then-plateau sweep is monotone over the range") {
  // Bus bandwidth ramps linearly in log2(bytes) from 1 KiB and saturates at 12 GB/s from 32 MiB.
  std::vector<BandwidthSample> samples;
  for (int e = 10; e <= 30; ++e) {
    const double bytes = std::exp2(e);
    const double bw = 12e9 * std::min(1.0, (e - 5) / 20.0);
    samples.push_back({bytes, bytes / bw});
  }
  const auto fit = fit_bandwidth(samples, 3);
  double prev = 0.0;
  for (int k = 0; k < 128; ++k) {
    const double bytes = std::exp2(10.0 + 20.0 * k / 127.0);
    const double t = comm_time(fit.model, bytes);
    CHECK(t > 0.0);
    CHECK(t >= prev);
    prev = t;
  }
}

TEST_CASE("synthetic generator scales time with the speed factor") {
  SyntheticParams p;
  p.num_layers = 4;
  p.gpus = {{"fast", 40LL << 30, 8, 3.0, 1.0}, {"slow", 16LL << 30, 8, 2.0, 2.0}};
  p.zones = {{"z", "r", {{"fast", 1}, {"slow", 1}}}};
  const auto inst = gen_synthetic_profile(p);
  for (int tp : p.tp_degrees) {
    for (int mbs : p.microbatch_sizes) {
      const auto& fast = lookup_layer(inst.store, 0, "fast", tp, mbs);
      const auto& slow = lookup_layer(inst.store, 0, "slow", tp, mbs);
      CHECK(slow.t_fwd == 2.0 * fast.t_fwd);
      CHECK(fast.params == lookup_layer(inst.store, 0, "fast", tp, 1).params);
    }
  }
  std::stringstream io;
  save_cluster(io, inst.cluster);
  CHECK_NOTHROW(load_cluster(io));
}

TEST_CASE("synthetic generator is deterministic in its seed") {
  auto p = synthetic_preset("opt350-like");
  p.jitter = 0.2;
  p.distinct_layers = 4;
  p.seed = 11;
  const auto a = gen_synthetic_profile(p);
  const auto b = gen_synthetic_profile(p);
  CHECK(a.store == b.store);
  p.seed = 12;
  CHECK_FALSE(gen_synthetic_profile(p).store == a.store);
}
