#include <algorithm>
#include <cmath>
#include <limits>

#include "doctest.h"
#include "hetplan/oracle.hpp"
#include "hetplan/planner.hpp"
#include "support/fixtures.hpp"
#include "support/instances.hpp"

using namespace hetplan;
using namespace hetplan::testing;

namespace {

constexpr int64_t kGiB = int64_t{1} << 30;

double objective_value(const SimReport& r, Objective objective) {
  return objective == Objective::kMaxThroughput ? r.t_iter : r.c_iter;
}

bool close(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(std::abs(a), std::abs(b)); }

SearchOptions single_thread() {
  SearchOptions o;
  o.threads = 1;
  return o;
}

// Two GPU types ("A" big, "V" small) with `nodes` single-GPU nodes each in one region.
Fixture two_type_fixture(int num_layers, int64_t gbs, int nodes) {
  auto f = make_fixture(num_layers, gbs, {1, 2});
  f.gpu("A", 40 * kGiB, 2, 3.0);
  f.gpu("V", 16 * kGiB, 2, 1.0);
  f.zone("z", "r");
  f.nodes("A", "z", nodes);
  f.nodes("V", "z", nodes);
  f.links(1e11, 1e10, 1e9);
  for (int mbs : {1, 2}) {
    for (int tp : {1, 2}) {
      f.add_all("A", tp, mbs, record(1e-3 * mbs / tp, 2e-3 * mbs / tp, 1e-4, 4000000 / tp, 1 << 20, (64 << 20) / tp));
      f.add_all("V", tp, mbs, record(3e-3 * mbs / tp, 6e-3 * mbs / tp, 3e-4, 4000000 / tp, 1 << 20, (64 << 20) / tp));
    }
  }
  return f;
}

}  // namespace

TEST_CASE("enumerate_partitions examples") {
  using V = std::vector<std::vector<int>>;
  CHECK(enumerate_partitions(8, 4, 0) == V{{2, 2, 2, 2}});
  const auto seven = enumerate_partitions(7, 2, 0);
  CHECK(seven.size() == 2);
  CHECK(std::count(seven.begin(), seven.end(), std::vector<int>{4, 3}) == 1);
  CHECK(std::count(seven.begin(), seven.end(), std::vector<int>{3, 4}) == 1);
  CHECK(enumerate_partitions(8, 2, 1) == V{{3, 5}, {4, 4}, {5, 3}});
}

TEST_CASE("generate_combos examples") {
  ClusterSpec c;
  c.gpu_types = {{"A", 40 * kGiB, 2, 1.0}, {"V", 16 * kGiB, 2, 1.0}};
  c.zones = {{"z", "r"}};

  const ResourcePool one_node({{{"A", "r"}, 1}});
  const auto single = generate_combos(one_node, 2, {{"A", 1}}, "r", c);
  CHECK(single == std::vector<std::map<std::string, int>>{{{"A", 2}}});

  const ResourcePool ample({{{"A", "r"}, 4}, {{"V", "r"}, 4}});
  const auto both = generate_combos(ample, 2, {{"A", 1}, {"V", 1}}, "r", c);
  CHECK(both.size() == 3);
  for (const std::map<std::string, int>& want :
       {std::map<std::string, int>{{"A", 2}}, {{"A", 1}, {"V", 1}}, {{"V", 2}}}) {
    CHECK(std::count(both.begin(), both.end(), want) == 1);
  }

  CHECK(generate_combos(ample, 1, {{"A", 4}}, "r", c).empty());
  CHECK(generate_combos(ample, 1, {}, "r", c).empty());
}

TEST_CASE("find_region_fits examples") {
  const ResourcePool pool({{{"A", "us"}, 2}, {{"A", "eu"}, 4}, {{"A", "ap"}, 1}});
  CHECK(find_region_fits({{"A", 2}}, std::string("us"), pool) == std::optional<std::string>("us"));
  CHECK(find_region_fits({{"A", 3}}, std::string("us"), pool) == std::optional<std::string>("eu"));
  CHECK(find_region_fits({{"A", 1}}, std::nullopt, pool) == std::optional<std::string>("eu"));
  CHECK_FALSE(find_region_fits({{"A", 5}}, std::string("us"), pool));
}

TEST_CASE("min tp table examples") {
  auto f = make_fixture(1, 8);
  f.gpu("A", 1 * kGiB, 4, 1.0);
  f.zone("z", "r");
  f.nodes("A", "z", 1);
  f.links(1e11, 1e10, 1e9);
  SUBCASE("fits at tp=1") {
    f.add_all("A", 1, 1, record(1e-3, 2e-3, 1e-4, 1000, 10, 10));
    f.add_all("A", 2, 1, record(1e-3, 2e-3, 1e-4, 500, 10, 5));
    auto table = min_tp_table(f.job, f.cluster, f.store(), {{1}}, {1});
    CHECK(table.find({1, 0, 0, 1, 1}, "A")->min_tp == 1);
  }
  SUBCASE("model too large even at the widest tp") {
    // 100M params per shard at 16 bytes each exceed 1 GiB.
    f.add_all("A", 4, 1, record(1e-3, 2e-3, 1e-4, 100000000, 10, 10));
    auto table = min_tp_table(f.job, f.cluster, f.store(), {{1}}, {1});
    CHECK(table.find({1, 0, 0, 1, 1}, "A")->min_tp == 0);
  }
  SUBCASE("tp=1 out of memory, tp=2 fits") {
    f.add_all("A", 1, 1, record(1e-3, 2e-3, 1e-4, 80000000, 10, 10));
    f.add_all("A", 2, 1, record(1e-3, 2e-3, 1e-4, 40000000, 10, 10));
    const auto store = f.store();
    Plan plan{1, 1, {stage(0, 1, "r", {{"A", 1, {}}})}};
    CHECK(worker_memory(plan, 0, 0, f.job, store, f.cluster).m_peak > f.cluster.gpu_types[0].mem_bytes);
    plan.stages[0].replicas[0].tp = 2;
    CHECK(worker_memory(plan, 0, 0, f.job, store, f.cluster).m_peak <= f.cluster.gpu_types[0].mem_bytes);
    auto table = min_tp_table(f.job, f.cluster, store, {{1}}, {1});
    CHECK(table.find({1, 0, 0, 1, 1}, "A")->min_tp == 2);
  }
}

TEST_CASE("min tp table agrees with a worker_memory brute force") {
  int entries = 0;
  for (uint64_t seed = 0; seed < 60; ++seed) {
    const auto inst = seed % 2 ? tight_memory_instance(seed) : random_instance(seed);
    const Simulator sim(inst.job, inst.cluster, inst.store);
    const int L = inst.job.total_layers();
    for (int P = 1; P <= L; ++P) {
      const auto parts = enumerate_partitions(L, P, 1);
      auto table = min_tp_table(inst.job, inst.cluster, inst.store, parts, inst.job.allowed_microbatch_sizes);
      for (const auto& part : parts) {
        for (int mbs : inst.job.allowed_microbatch_sizes) {
          for (const auto& gpu : inst.cluster.gpu_types) {
            Plan plan{mbs, 1, {}};
            int first = 0;
            for (int size : part) {
              plan.stages.push_back({first, size, inst.cluster.regions()[0], {{gpu.name, 1, {}}}});
              first += size;
            }
            for (int i = 0; i < P; ++i) {
              int brute = 0;
              for (int tp : sim.tp_degrees(sim.gpu_index(gpu.name))) {
                if (tp > gpu.gpus_per_node) continue;
                plan.stages[static_cast<size_t>(i)].replicas[0].tp = tp;
                try {
                  const auto m = worker_memory(plan, i, 0, inst.job, inst.store, inst.cluster);
                  if (m.m_peak <= gpu.mem_bytes) {
                    brute = tp;
                    break;
                  }
                } catch (const MissingProfile&) {
                }
              }
              const StageSignature sig{P, i, plan.stages[static_cast<size_t>(i)].first_layer,
                                       plan.stages[static_cast<size_t>(i)].layer_count, mbs};
              const auto e = table.find(sig, gpu.name);
              REQUIRE(e);
              CHECK(e->min_tp == brute);
              ++entries;
              // A superset layer range at the same position never needs a smaller tp.
              if (sig.first_layer + sig.layer_count < L && e->min_tp > 0) {
                auto wider = sig;
                ++wider.layer_count;
                const auto w = compute_tp_entry(sim, wider, sim.gpu_index(gpu.name));
                CHECK((w.min_tp == 0 || w.min_tp >= e->min_tp));
              }
            }
          }
        }
      }
    }
  }
  CHECK(entries > 500);
}

TEST_CASE("solve_dp single stage equals direct enumeration") {
  auto f = two_type_fixture(1, 8, 2);
  f.nodes("V", "z", 0);
  const auto store = f.store();
  const Simulator sim(f.job, f.cluster, store);
  StageTpTable table;
  const auto sub = solve_dp(sim, table, {1}, 1, 1, 0, f.cluster.pool(), std::nullopt, std::nullopt);
  REQUIRE(sub);
  double best = std::numeric_limits<double>::infinity();
  for (int tp : {1, 2}) {
    const Plan p{1, 1, {stage(0, 1, "r", {{"A", tp, {}}})}};
    best = std::min(best, sim.simulate(p).t_iter);
  }
  CHECK(sub->t_iter == best);
}

TEST_CASE("solve_dp matches the oracle on a fixed partition and is bit-equal to simulate") {
  const auto f = two_type_fixture(2, 8, 3);
  const auto store = f.store();
  const Simulator sim(f.job, f.cluster, store);
  const auto plans = enumerate_all_plans(f.job, f.cluster, store);
  for (int mbs : {1, 2}) {
    for (int D : {1, 2, 4}) {
      if (8 % (D * mbs) != 0) continue;
      double best = std::numeric_limits<double>::infinity();
      double cheapest = std::numeric_limits<double>::infinity();
      for (const auto& p : plans) {
        if (p.mbs != mbs || p.dp_degree != D || p.num_stages() != 2) continue;
        const auto r = sim.simulate(p);
        if (r.oom) continue;
        best = std::min(best, r.t_iter);
        cheapest = std::min(cheapest, r.c_iter);
      }
      StageTpTable table;
      const auto sub = solve_dp(sim, table, {1, 1}, mbs, D, 0, f.cluster.pool(), std::nullopt, std::nullopt);
      if (std::isinf(best)) {
        CHECK_FALSE(sub);
        continue;
      }
      REQUIRE(sub);
      CHECK(close(sub->t_iter, best));
      const Plan assembled{mbs, D, sub->stages};
      CHECK(sim.simulate(assembled).t_iter == sub->t_iter);

      const auto none = solve_dp(sim, table, {1, 1}, mbs, D, 0, f.cluster.pool(), cheapest * (1 - 1e-9),
                                 std::nullopt);
      CHECK_FALSE(none);
      const auto within = solve_dp(sim, table, {1, 1}, mbs, D, 0, f.cluster.pool(), cheapest, std::nullopt);
      REQUIRE(within);
      CHECK(sim.simulate(Plan{mbs, D, within->stages}).c_iter <= cheapest);
    }
  }
}

TEST_CASE("plan_search matches the oracle on random instances") {
  int compared = 0;
  for (uint64_t seed = 0; seed < 40; ++seed) {
    const auto inst = seed % 4 == 3 ? tight_memory_instance(seed) : random_instance(seed);
    for (Objective obj : {Objective::kMaxThroughput, Objective::kMinCostPerIteration}) {
      SearchRequest req;
      req.objective = obj;
      const auto oracle = oracle_search(req, inst.job, inst.cluster, inst.store);
      if (!oracle.best) {
        CHECK_THROWS_AS(plan_search(req, inst.job, inst.cluster, inst.store, single_thread()), NoFeasiblePlan);
        continue;
      }
      const auto res = plan_search(req, inst.job, inst.cluster, inst.store, single_thread());
      REQUIRE(!res.plans.empty());
      CHECK(close(objective_value(res.plans[0].report, obj), objective_value(oracle.best->report, obj)));
      ++compared;
    }
  }
  CHECK(compared > 40);
}

TEST_CASE("throughput floor above every plan is infeasible") {
  auto inst = random_instance(0);
  for (uint64_t seed = 1; !oracle_search({}, inst.job, inst.cluster, inst.store).best; ++seed) {
    inst = random_instance(seed);
  }
  SearchRequest req;
  req.objective = Objective::kMinCostPerIteration;
  req.min_throughput = MinThroughput{1e12};
  try {
    plan_search(req, inst.job, inst.cluster, inst.store, single_thread());
    FAIL("expected NoFeasiblePlan");
  } catch (const NoFeasiblePlan& e) {
    CHECK(e.reason() == InfeasibleReason::kThroughputFloor);
  }
  CHECK_FALSE(oracle_search(req, inst.job, inst.cluster, inst.store).best);
}

TEST_CASE("budget at the optimum keeps it, just below excludes it") {
  int checked = 0;
  for (uint64_t seed = 0; seed < 30 && checked < 8; ++seed) {
    const auto inst = random_instance(seed);
    SearchRequest req;
    const auto oracle = oracle_search(req, inst.job, inst.cluster, inst.store);
    if (!oracle.best) continue;
    const double cost = oracle.best->report.c_iter;
    const double t = oracle.best->report.t_iter;
    req.budget = Budget{cost};
    const auto at = plan_search(req, inst.job, inst.cluster, inst.store, single_thread());
    CHECK(close(at.plans[0].report.t_iter, t));
    CHECK(at.plans[0].report.c_iter <= cost);

    req.budget = Budget{std::nextafter(cost, 0.0) * (1 - 1e-12)};
    try {
      const auto below = plan_search(req, inst.job, inst.cluster, inst.store, single_thread());
      CHECK(below.plans[0].report.t_iter > t);
      CHECK(below.plans[0].report.c_iter <= req.budget->max_cost_per_iteration);
    } catch (const NoFeasiblePlan& e) {
      CHECK(e.reason() == InfeasibleReason::kBudget);
    }
    ++checked;
  }
  CHECK(checked == 8);
}

TEST_CASE("plan_search is deterministic across runs and thread counts") {
  const auto inst = two_zone_instance();
  SearchRequest req;
  SearchOptions o = single_thread();
  o.top_n = 3;
  const auto a = plan_search(req, inst.job, inst.cluster, inst.store, o);
  const auto b = plan_search(req, inst.job, inst.cluster, inst.store, o);
  o.threads = 4;
  const auto c = plan_search(req, inst.job, inst.cluster, inst.store, o);
  REQUIRE(a.plans.size() == b.plans.size());
  REQUIRE(a.plans.size() == c.plans.size());
  for (size_t k = 0; k < a.plans.size(); ++k) {
    CHECK(a.plans[k].plan == b.plans[k].plan);
    CHECK(a.plans[k].plan == c.plans[k].plan);
    CHECK(a.plans[k].report.t_iter == c.plans[k].report.t_iter);
  }
}

TEST_CASE("top-N plans are distinct and ranked") {
  const auto inst = two_zone_instance();
  SearchRequest req;
  SearchOptions o = single_thread();
  o.top_n = 3;
  const auto res = plan_search(req, inst.job, inst.cluster, inst.store, o);
  REQUIRE(res.plans.size() == 3);
  for (size_t k = 1; k < res.plans.size(); ++k) {
    CHECK(ranks_before(res.plans[k - 1], res.plans[k], req.objective, inst.cluster));
    CHECK_FALSE(res.plans[k - 1].plan == res.plans[k].plan);
  }
  o.top_n = 1;
  const auto one = plan_search(req, inst.job, inst.cluster, inst.store, o);
  CHECK(one.plans[0].plan == res.plans[0].plan);
}

TEST_CASE("enlarging quotas never worsens the optimum") {
  int checked = 0;
  for (uint64_t seed = 0; seed < 40; ++seed) {
    const auto inst = random_instance(seed);
    const auto full = inst.cluster.pool();
    for (const auto& [key, n] : full.counts()) {
      if (n == 0) continue;
      SearchRequest req;
      ResourcePool quota = full;
      quota.set(key.first, key.second, n - 1);
      req.quotas = quota;
      std::optional<double> smaller;
      try {
        smaller = plan_search(req, inst.job, inst.cluster, inst.store, single_thread()).plans[0].report.t_iter;
      } catch (const NoFeasiblePlan&) {
      }
      req.quotas = full;
      if (smaller) {
        const auto larger = plan_search(req, inst.job, inst.cluster, inst.store, single_thread());
        CHECK(larger.plans[0].report.t_iter <= *smaller);
        ++checked;
      }
    }
  }
  CHECK(checked > 20);
}

TEST_CASE("emitted plans are safe and respect the tp table") {
  for (uint64_t seed = 0; seed < 40; ++seed) {
    const auto inst = seed % 2 ? tight_memory_instance(seed) : random_instance(seed);
    for (DpStrategy strategy : {DpStrategy::kFrontier, DpStrategy::kListing}) {
      SearchOptions o = single_thread();
      o.strategy = strategy;
      o.top_n = 4;
      SearchRequest req;
      if (seed % 3 == 0) {
        const auto oracle = oracle_search(req, inst.job, inst.cluster, inst.store);
        if (oracle.best) req.budget = Budget{oracle.best->report.c_iter * 0.9};
      }
      StageTpTable table;
      SearchResult res;
      try {
        res = plan_search(req, inst.job, inst.cluster, inst.store, o, table);
      } catch (const NoFeasiblePlan&) {
        continue;
      }
      for (const auto& rp : res.plans) {
        CHECK(validate_plan(rp.plan, inst.job, inst.cluster).empty());
        const auto r = simulate(rp.plan, inst.job, inst.cluster, inst.store);
        CHECK_FALSE(r.oom);
        CHECK(r.t_iter == rp.report.t_iter);
        if (req.budget) CHECK(r.c_iter <= req.budget->max_cost_per_iteration);
        const int P = rp.plan.num_stages();
        for (int i = 0; i < P; ++i) {
          const auto& st = rp.plan.stages[static_cast<size_t>(i)];
          for (const auto& rep : st.replicas) {
            const auto e = table.find({P, i, st.first_layer, st.layer_count, rp.plan.mbs}, rep.gpu_type);
            REQUIRE(e);
            CHECK(e->min_tp > 0);
            CHECK(rep.tp >= e->min_tp);
          }
        }
      }
    }
  }
}

TEST_CASE("plan_search honours its time limit") {
  const auto inst = opt350_cluster(2, true);
  SearchRequest req;
  SearchOptions o = single_thread();
  o.time_limit_seconds = 0.05;
  CHECK_THROWS_AS(plan_search(req, inst.job, inst.cluster, inst.store, o), SearchTimeout);
}
