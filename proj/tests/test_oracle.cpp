#include "doctest.h"
#include "hetplan/oracle.hpp"
#include "support/fixtures.hpp"
#include "support/instances.hpp"

using namespace hetplan;
using namespace hetplan::testing;

namespace {

Fixture toy(int num_layers, int64_t gbs, int gpus_per_node, int nodes, std::vector<int> tps) {
  auto f = make_fixture(num_layers, gbs);
  f.gpu("A", 40LL << 30, gpus_per_node, 2.0);
  f.zone("z", "r");
  f.nodes("A", "z", nodes);
  f.links(1e11, 1e10, 1e9);
  for (int tp : tps) f.add_all("A", tp, 1, record(1e-3 / tp, 2e-3 / tp, 1e-4, 1000000 / tp, 1 << 20, 1 << 20));
  return f;
}

}  // namespace

TEST_CASE("enumerate_all_plans on a single node yields one plan") {
  const auto f = toy(1, 1, 1, 1, {1});
  const auto plans = enumerate_all_plans(f.job, f.cluster, f.store());
  REQUIRE(plans.size() == 1);
  CHECK(validate_plan(plans[0], f.job, f.cluster).empty());
}

TEST_CASE("enumerate_all_plans matches a hand count") {
  // 2 nodes x 2 GPUs, 2 layers, gbs 4, tp in {1, 2}:
  //   P=1: D=1 tp1|tp2, D=2 tp1|tp2, D=4 tp1          -> 5
  //   P=2: D=1 tp in {1,2} per stage, D=2 tp1 per stage -> 5
  const auto f = toy(2, 4, 2, 2, {1, 2});
  const auto plans = enumerate_all_plans(f.job, f.cluster, f.store());
  CHECK(plans.size() == 10);
  for (size_t a = 0; a < plans.size(); ++a) {
    CHECK(validate_plan(plans[a], f.job, f.cluster).empty());
    for (size_t b = a + 1; b < plans.size(); ++b) CHECK_FALSE(plans[a] == plans[b]);
  }
}

TEST_CASE("enumerate_all_plans refuses instances above the caps") {
  const auto f = toy(1, 8, 1, 9, {1});
  CHECK_THROWS_AS(enumerate_all_plans(f.job, f.cluster, f.store()), InstanceTooLarge);
  const auto g = toy(5, 8, 1, 2, {1});
  CHECK_THROWS_AS(enumerate_all_plans(g.job, g.cluster, g.store()), InstanceTooLarge);
}

TEST_CASE("oracle_search is no worse than any enumerated candidate") {
  for (uint64_t seed = 0; seed < 30; ++seed) {
    const auto inst = random_instance(seed);
    const Simulator sim(inst.job, inst.cluster, inst.store);
    for (Objective obj : {Objective::kMaxThroughput, Objective::kMinCostPerIteration}) {
      SearchRequest req;
      req.objective = obj;
      const auto res = oracle_search(req, inst.job, inst.cluster, inst.store);
      uint64_t feasible = 0;
      for (const auto& p : enumerate_all_plans(inst.job, inst.cluster, inst.store)) {
        SimReport r;
        try {
          r = sim.simulate(p);
        } catch (const MissingProfile&) {
          continue;
        }
        if (r.oom) continue;
        ++feasible;
        REQUIRE(res.best);
        const double best = obj == Objective::kMaxThroughput ? res.best->report.t_iter : res.best->report.c_iter;
        const double mine = obj == Objective::kMaxThroughput ? r.t_iter : r.c_iter;
        CHECK(best <= mine);
      }
      CHECK(res.feasible == feasible);
    }
  }
}

TEST_CASE("a zero budget admits no plan when GPUs cost money") {
  const auto f = toy(2, 4, 2, 2, {1, 2});
  SearchRequest req;
  req.budget = Budget{0.0};
  const auto res = oracle_search(req, f.job, f.cluster, f.store());
  CHECK_FALSE(res.best);
  CHECK(res.fits_memory > 0);
}
