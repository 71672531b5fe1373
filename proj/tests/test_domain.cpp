#include "doctest.h"
#include "hetplan/domain.hpp"
#include "support/fixtures.hpp"

using namespace hetplan;
using namespace hetplan::testing;

namespace {

bool has_code(const std::vector<Violation>& v, ViolationCode code) {
  for (const auto& x : v) {
    if (x.code == code) return true;
  }
  return false;
}

Fixture two_node_fixture() {
  auto f = make_fixture(2, 4);
  f.gpu("A", 16LL << 30, 1, 1.0);
  f.zone("us-a", "us");
  f.nodes("A", "us-a", 2);
  f.links(1e11, 1e10, 1e9);
  f.add_all("A", 1, 1, record(1e-3, 2e-3, 1e-4, 1000, 100, 100));
  return f;
}

}  // namespace

TEST_CASE("validate_plan flags a tp group wider than its node") {
  auto f = make_fixture(1, 8);
  f.gpu("A", 80LL << 30, 4, 1.0);
  f.zone("us-a", "us");
  f.nodes("A", "us-a", 4);
  Plan plan{1, 1, {stage(0, 1, "us", {{"A", 8, {}}})}};
  const auto v = validate_plan(plan, f.job, f.cluster);
  CHECK(has_code(v, ViolationCode::kTpExceedsNode));
}

TEST_CASE("validate_plan flags a stage whose replicas span two regions") {
  auto f = make_fixture(1, 8);
  f.gpu("A", 80LL << 30, 1, 1.0);
  f.zone("us-a", "us");
  f.zone("eu-a", "eu");
  f.nodes("A", "us-a", 1);
  f.nodes("A", "eu-a", 1);
  Plan plan{1, 2, {stage(0, 1, "us", {{"A", 1, "us"}, {"A", 1, "eu"}})}};
  const auto v = validate_plan(plan, f.job, f.cluster);
  CHECK(has_code(v, ViolationCode::kStageCrossesRegion));
}

TEST_CASE("validate_plan accepts a minimal two-stage plan") {
  const auto f = two_node_fixture();
  Plan plan{1, 1, {stage(0, 1, "us", {{"A", 1, {}}}), stage(1, 1, "us", {{"A", 1, {}}})}};
  CHECK(validate_plan(plan, f.job, f.cluster).empty());
}

TEST_CASE("validate_plan reports coverage, replica count, divisibility and node shortfalls") {
  const auto f = two_node_fixture();
  SUBCASE("gap in the layer cover") {
    Plan plan{1, 1, {stage(0, 1, "us", {{"A", 1, {}}})}};
    CHECK(has_code(validate_plan(plan, f.job, f.cluster), ViolationCode::kLayerCoverage));
  }
  SUBCASE("replica count differs from D") {
    Plan plan{1, 2, {stage(0, 2, "us", {{"A", 1, {}}})}};
    CHECK(has_code(validate_plan(plan, f.job, f.cluster), ViolationCode::kReplicaCount));
  }
  SUBCASE("D * mbs does not divide the global batch") {
    auto g = f;
    g.job.global_batch_size = 3;
    Plan plan{1, 2, {stage(0, 2, "us", {{"A", 1, {}}, {"A", 1, {}}})}};
    CHECK(has_code(validate_plan(plan, g.job, g.cluster), ViolationCode::kBatchNotDivisible));
  }
  SUBCASE("more nodes than available") {
    Plan plan{1, 4, {stage(0, 2, "us", {{"A", 1, {}}, {"A", 1, {}}, {"A", 1, {}}, {"A", 1, {}}})}};
    CHECK(has_code(validate_plan(plan, f.job, f.cluster), ViolationCode::kInsufficientNodes));
  }
  SUBCASE("mixed tp for one type in a stage") {
    auto g = f;
    g.cluster.gpu_types[0].gpus_per_node = 2;
    Plan plan{1, 2, {stage(0, 2, "us", {{"A", 1, {}}, {"A", 2, {}}})}};
    CHECK(has_code(validate_plan(plan, g.job, g.cluster), ViolationCode::kMixedTp));
  }
}

TEST_CASE("pool_subtract examples") {
  const ResourcePool a4({{{"A", "us"}, 4}});
  CHECK(pool_subtract(a4, a4).count("A", "us") == 0);

  const ResourcePool mixed({{{"A", "us"}, 4}, {{"V", "us"}, 2}});
  const auto rest = pool_subtract(mixed, ResourcePool({{{"V", "us"}, 1}}));
  CHECK(rest.count("A", "us") == 4);
  CHECK(rest.count("V", "us") == 1);

  CHECK_THROWS_AS(pool_subtract(ResourcePool({{{"A", "us"}, 1}}), ResourcePool({{{"A", "us"}, 2}})),
                  InsufficientResources);
}

TEST_CASE("pool_subtract then pool_add is the identity") {
  std::mt19937 rng(7);
  std::uniform_int_distribution<int> n(0, 9);
  for (int trial = 0; trial < 200; ++trial) {
    ResourcePool pool;
    ResourcePool demand;
    for (const char* type : {"A", "V"}) {
      for (const char* region : {"us", "eu"}) {
        const int have = n(rng);
        pool.set(type, region, have);
        demand.set(type, region, std::uniform_int_distribution<int>(0, have)(rng));
      }
    }
    CHECK(pool_add(pool_subtract(pool, demand), demand) == pool);
  }
}

TEST_CASE("ResourcePool rejects negative counts") {
  ResourcePool pool;
  CHECK_THROWS(pool.set("A", "us", -1));
}

TEST_CASE("zones collapse into regions in the pool view") {
  auto f = make_fixture(1, 1);
  f.gpu("A", 1 << 30, 8, 1.0);
  f.zone("us-a", "us");
  f.zone("us-b", "us");
  f.nodes("A", "us-a", 2);
  f.nodes("A", "us-b", 3);
  CHECK(f.cluster.pool().count("A", "us") == 5);
  CHECK(f.cluster.regions() == std::vector<std::string>{"us"});
}

TEST_CASE("node packing puts floor(gpus_per_node / tp) replicas on a node") {
  auto f = make_fixture(1, 8);
  f.gpu("A", 1 << 30, 8, 1.0);
  f.zone("us-a", "us");
  f.nodes("A", "us-a", 8);
  StageAssignment s = stage(0, 1, "us", {{"A", 2, {}}, {"A", 2, {}}, {"A", 2, {}}, {"A", 2, {}}, {"A", 2, {}}});
  CHECK(replicas_per_node(f.cluster.gpu("A"), 2) == 4);
  CHECK(stage_node_demand(s, f.cluster).at("A") == 2);
  CHECK(replicas_per_node(f.cluster.gpu("A"), 3) == 2);
}

TEST_CASE("accepted plans satisfy N_b * D * mbs = global batch size") {
  const auto f = two_node_fixture();
  for (int D : {1, 2, 4}) {
    Plan plan{1, D, {}};
    StageAssignment s = stage(0, 2, "us", {});
    for (int k = 0; k < D; ++k) s.replicas.push_back({"A", 1, {}});
    plan.stages.push_back(s);
    auto g = f;
    g.cluster.availability[{"A", "us-a"}] = D;
    if (validate_plan(plan, g.job, g.cluster).empty()) {
      CHECK(plan.num_microbatches(g.job) * D * plan.mbs == g.job.global_batch_size);
    }
  }
}
