#include "hetplan/oracle.hpp"

#include <algorithm>

#include "hetplan/simulator.hpp"

namespace hetplan {

namespace {

void check_caps(const JobSpec& job, const ClusterSpec& cluster, const ResourcePool& pool,
                const OracleCaps& caps) {
  auto refuse = [](const std::string& what) { throw InstanceTooLarge("instance exceeds oracle caps: " + what); };
  if (pool.total_nodes() > caps.max_nodes) refuse(std::to_string(pool.total_nodes()) + " nodes");
  if (static_cast<int>(cluster.gpu_types.size()) > caps.max_gpu_types) refuse("too many GPU types");
  if (static_cast<int>(cluster.regions().size()) > caps.max_regions) refuse("too many regions");
  if (job.total_layers() > caps.max_layers) refuse(std::to_string(job.total_layers()) + " layers");
  if (static_cast<int>(job.allowed_microbatch_sizes.size()) > caps.max_microbatch_sizes) {
    refuse("too many microbatch sizes");
  }
}

struct Enumerator {
  const JobSpec& job;
  const ClusterSpec& cluster;
  const std::function<void(const Plan&)>& emit;
  std::vector<std::string> types;
  std::vector<const GpuTypeSpec*> specs;
  std::vector<std::vector<int>> tps;  // admissible tp per type
  std::vector<std::string> regions;
  std::map<std::pair<std::string, std::string>, int> left;
  Plan plan;
  std::vector<int> sizes;

  void stages(size_t i, int l0) {
    if (i == sizes.size()) {
      emit(canonical(plan));
      return;
    }
    for (const auto& region : regions) {
      std::vector<int> counts(types.size(), 0);
      split(i, l0, region, counts, 0, plan.dp_degree);
    }
  }

  void split(size_t i, int l0, const std::string& region, std::vector<int>& counts, size_t k, int remaining) {
    if (k + 1 == types.size()) {
      counts[k] = remaining;
      std::vector<int> tp(types.size(), 0);
      pick(i, l0, region, counts, tp, 0);
      return;
    }
    for (int c = remaining; c >= 0; --c) {
      counts[k] = c;
      split(i, l0, region, counts, k + 1, remaining - c);
    }
  }

  void pick(size_t i, int l0, const std::string& region, const std::vector<int>& counts,
            std::vector<int>& tp, size_t k) {
    if (k == types.size()) {
      place(i, l0, region, counts, tp);
      return;
    }
    if (counts[k] == 0) {
      pick(i, l0, region, counts, tp, k + 1);
      return;
    }
    for (int t : tps[k]) {
      tp[k] = t;
      pick(i, l0, region, counts, tp, k + 1);
    }
  }

  void place(size_t i, int l0, const std::string& region, const std::vector<int>& counts,
             const std::vector<int>& tp) {
    std::vector<int> demand(types.size(), 0);
    for (size_t k = 0; k < types.size(); ++k) {
      if (counts[k] == 0) continue;
      const int per_node = replicas_per_node(*specs[k], tp[k]);
      demand[k] = (counts[k] + per_node - 1) / per_node;
      if (demand[k] > left[{types[k], region}]) return;
    }
    StageAssignment s;
    s.first_layer = l0;
    s.layer_count = sizes[i];
    s.region = region;
    for (size_t k = 0; k < types.size(); ++k) {
      for (int c = 0; c < counts[k]; ++c) s.replicas.push_back({types[k], tp[k], {}});
      left[{types[k], region}] -= demand[k];
    }
    plan.stages.push_back(std::move(s));
    stages(i + 1, l0 + sizes[i]);
    plan.stages.pop_back();
    for (size_t k = 0; k < types.size(); ++k) left[{types[k], region}] += demand[k];
  }
};

void compositions(int total, int parts, std::vector<int>& cur, const std::function<void()>& fn) {
  if (parts == 0) {
    if (total == 0) fn();
    return;
  }
  for (int L = 1; L <= total - (parts - 1); ++L) {
    cur.push_back(L);
    compositions(total - L, parts - 1, cur, fn);
    cur.pop_back();
  }
}

}  // namespace

void enumerate_all_plans(const JobSpec& job, const ClusterSpec& cluster, const ProfileStore& store,
                         const ResourcePool& pool, const OracleCaps& caps,
                         const std::function<void(const Plan&)>& emit) {
  check_caps(job, cluster, pool, caps);
  const Simulator sim(job, cluster, store);
  Enumerator en{job, cluster, emit, {}, {}, {}, {}, {}, {}, {}};
  for (size_t g = 0; g < sim.gpu_names().size(); ++g) {
    const auto& spec = sim.gpu(static_cast<int>(g));
    std::vector<int> tps;
    for (int tp : sim.tp_degrees(static_cast<int>(g))) {
      if (tp >= 1 && tp <= spec.gpus_per_node) tps.push_back(tp);
    }
    if (tps.empty()) continue;
    en.types.push_back(sim.gpu_names()[g]);
    en.specs.push_back(&spec);
    en.tps.push_back(std::move(tps));
  }
  if (en.types.empty()) return;
  for (const auto& [key, n] : pool.counts()) {
    if (std::find(en.regions.begin(), en.regions.end(), key.second) == en.regions.end()) {
      en.regions.push_back(key.second);
    }
  }
  std::sort(en.regions.begin(), en.regions.end());
  en.left = pool.counts();

  std::vector<int> mbs_set = job.allowed_microbatch_sizes;
  std::sort(mbs_set.begin(), mbs_set.end());
  mbs_set.erase(std::unique(mbs_set.begin(), mbs_set.end()), mbs_set.end());
  const int total = job.total_layers();
  for (int P = 1; P <= total; ++P) {
    std::vector<int> cur;
    compositions(total, P, cur, [&]() {
      en.sizes = cur;
      for (int mbs : mbs_set) {
        if (mbs < 1 || job.global_batch_size % mbs != 0) continue;
        const int64_t n = job.global_batch_size / mbs;
        for (int64_t d = 1; d <= n; ++d) {
          if (n % d != 0) continue;
          en.plan = Plan{mbs, static_cast<int>(d), {}};
          en.stages(0, 0);
        }
      }
    });
  }
}

std::vector<Plan> enumerate_all_plans(const JobSpec& job, const ClusterSpec& cluster,
                                      const ProfileStore& store, const OracleCaps& caps) {
  std::vector<Plan> out;
  enumerate_all_plans(job, cluster, store, cluster.pool(), caps,
                      [&](const Plan& p) { out.push_back(p); });
  return out;
}

OracleResult oracle_search(const SearchRequest& request, const JobSpec& job, const ClusterSpec& cluster,
                           const ProfileStore& store, const OracleCaps& caps) {
  const Simulator sim(job, cluster, store);
  const ResourcePool pool = request.quotas ? pool_min(*request.quotas, cluster.pool()) : cluster.pool();
  OracleResult res;
  enumerate_all_plans(job, cluster, store, pool, caps, [&](const Plan& plan) {
    ++res.enumerated;
    SimReport rep;
    try {
      rep = sim.simulate(plan, false);
    } catch (const MissingProfile&) {
      return;
    }
    ++res.evaluated;
    if (rep.oom) return;
    ++res.fits_memory;
    if (!satisfies_constraints(rep, request)) return;
    ++res.feasible;
    RankedPlan cand{plan, std::move(rep)};
    if (!res.best || ranks_before(cand, *res.best, request.objective, cluster)) res.best = std::move(cand);
  });
  return res;
}

}  // namespace hetplan
