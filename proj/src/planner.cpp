#include "hetplan/planner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <exception>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <thread>
#include <unordered_map>

namespace hetplan {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Relative slack for pruning against budgets, floors and incumbents; pruning
// is only a speed-up, the final check on simulated values is exact.
constexpr double kPruneSlack = 1e-9;

int node_demand(const GpuTypeSpec& spec, int tp, int count) {
  if (count <= 0) return 0;
  const int per_node = replicas_per_node(spec, tp);
  if (per_node >= 1) return (count + per_node - 1) / per_node;
  return count * ((tp + spec.gpus_per_node - 1) / spec.gpus_per_node);
}

}  // namespace

// ---------------------------------------------------------------------------
// Minimum-tp table

StageTpTable::StageTpTable(StageTpTable&& other) noexcept {
  std::unique_lock lock(other.mu_);
  entries_ = std::move(other.entries_);
  computed_ = other.computed_.load();
  reused_ = other.reused_.load();
  recomputed_ = other.recomputed_.load();
}

TpEntry compute_tp_entry(const Simulator& sim, const StageSignature& stage, int gpu) {
  TpEntry e;
  const auto& spec = sim.gpu(gpu);
  for (int tp : sim.tp_degrees(gpu)) {
    auto prof = sim.stage_profile(stage.first_layer, stage.layer_count, gpu, tp, stage.mbs);
    if (!prof) continue;
    TpChoice c;
    c.tp = tp;
    c.fits_memory = sim.peak_bytes(*prof, stage.num_stages - stage.stage_index) <= spec.mem_bytes;
    c.within_node = tp <= spec.gpus_per_node;
    e.profiled = true;
    if (e.min_tp == 0 && c.fits_memory && c.within_node) e.min_tp = tp;
    e.choices.push_back(c);
  }
  return e;
}

const TpEntry& StageTpTable::get(const Simulator& sim, const StageSignature& stage,
                                 const std::string& gpu_type) {
  {
    std::shared_lock lock(mu_);
    auto it = entries_.find({stage, gpu_type});
    if (it != entries_.end()) {
      ++reused_;
      return it->second;
    }
  }
  const int g = sim.gpu_index(gpu_type);
  TpEntry e = g < 0 ? TpEntry{} : compute_tp_entry(sim, stage, g);
  std::unique_lock lock(mu_);
  auto [it, inserted] = entries_.emplace(Key{stage, gpu_type}, std::move(e));
  if (inserted) {
    ++computed_;
  } else {
    ++recomputed_;
  }
  return it->second;
}

std::optional<TpEntry> StageTpTable::find(const StageSignature& stage, const std::string& gpu_type) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find({stage, gpu_type});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

size_t StageTpTable::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

TpTableStats StageTpTable::stats() const {
  return {computed_.load(), reused_.load(), recomputed_.load()};
}

StageTpTable min_tp_table(const JobSpec& job, const ClusterSpec& cluster, const ProfileStore& store,
                          const std::vector<std::vector<int>>& partitions,
                          const std::vector<int>& mbs_set) {
  Simulator sim(job, cluster, store);
  StageTpTable table;
  for (const auto& part : partitions) {
    const int P = static_cast<int>(part.size());
    int l0 = 0;
    for (int i = 0; i < P; ++i) {
      for (int mbs : mbs_set) {
        for (const auto& name : sim.gpu_names()) {
          table.get(sim, {P, i, l0, part[static_cast<size_t>(i)], mbs}, name);
        }
      }
      l0 += part[static_cast<size_t>(i)];
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// Partitions, combos, regions

std::pair<int, int> stage_size_bounds(int total_layers, int num_stages, int slack) {
  const int lo_bal = total_layers / num_stages;
  const int hi_bal = (total_layers + num_stages - 1) / num_stages;
  const int lo = std::max(1, lo_bal - std::max(0, slack));
  const int hi = std::min(hi_bal + std::max(0, slack), total_layers - (num_stages - 1));
  return {lo, hi};
}

std::vector<std::vector<int>> enumerate_partitions(int total_layers, int num_stages, int slack) {
  std::vector<std::vector<int>> out;
  if (num_stages < 1 || total_layers < num_stages) return out;
  const auto [lo, hi] = stage_size_bounds(total_layers, num_stages, slack);
  std::vector<int> cur;
  std::function<void(int)> rec = [&](int remaining) {
    const int left = num_stages - static_cast<int>(cur.size());
    if (left == 0) {
      if (remaining == 0) out.push_back(cur);
      return;
    }
    for (int L = lo; L <= hi; ++L) {
      const int rest = remaining - L;
      if (rest < (left - 1) * lo || rest > (left - 1) * hi) continue;
      cur.push_back(L);
      rec(rest);
      cur.pop_back();
    }
  };
  rec(total_layers);
  return out;
}

std::vector<std::vector<int>> enumerate_partitions(const JobSpec& job, int num_stages, int slack) {
  return enumerate_partitions(job.total_layers(), num_stages, slack);
}

std::vector<std::map<std::string, int>> generate_combos(const ResourcePool& pool, int dp,
                                                         const std::map<std::string, int>& stage_tp,
                                                         const std::string& region,
                                                         const ClusterSpec& cluster) {
  struct Type {
    std::string name;
    const GpuTypeSpec* spec;
    int tp;
    int nodes;
  };
  std::vector<Type> types;
  for (const auto& [name, tp] : stage_tp) {
    const auto* spec = cluster.find_gpu(name);
    if (!spec || tp < 1 || tp > spec->gpus_per_node) continue;
    types.push_back({name, spec, tp, pool.count(name, region)});
  }
  std::vector<std::map<std::string, int>> out;
  if (dp < 1 || types.empty()) return out;
  std::vector<int> counts(types.size(), 0);
  std::function<void(size_t, int)> rec = [&](size_t k, int remaining) {
    if (k + 1 == types.size()) {
      if (node_demand(*types[k].spec, types[k].tp, remaining) > types[k].nodes) return;
      counts[k] = remaining;
      std::map<std::string, int> combo;
      for (size_t j = 0; j < types.size(); ++j) {
        if (counts[j] > 0) combo[types[j].name] = counts[j];
      }
      out.push_back(std::move(combo));
      return;
    }
    for (int c = remaining; c >= 0; --c) {
      if (node_demand(*types[k].spec, types[k].tp, c) > types[k].nodes) continue;
      counts[k] = c;
      rec(k + 1, remaining - c);
    }
  };
  rec(0, dp);
  return out;
}

namespace {

// Regions of the pool by descending available nodes, then name.
std::vector<std::string> regions_by_capacity(const ResourcePool& pool) {
  std::map<std::string, int> cap;
  for (const auto& [key, n] : pool.counts()) cap[key.second] += n;
  std::vector<std::string> out;
  for (const auto& [r, n] : cap) out.push_back(r);
  std::stable_sort(out.begin(), out.end(),
                   [&](const std::string& a, const std::string& b) { return cap[a] > cap[b]; });
  return out;
}

}  // namespace

std::optional<std::string> find_region_fits(const std::map<std::string, int>& node_demand,
                                            const std::optional<std::string>& current_region,
                                            const ResourcePool& pool) {
  auto fits = [&](const std::string& region) {
    for (const auto& [type, n] : node_demand) {
      if (n > pool.count(type, region)) return false;
    }
    return true;
  };
  if (current_region && fits(*current_region)) return current_region;
  for (const auto& r : regions_by_capacity(pool)) {
    if (fits(r)) return r;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Ranking

bool ranks_before(const RankedPlan& a, const RankedPlan& b, Objective objective,
                  const ClusterSpec& cluster) {
  const double va = objective == Objective::kMaxThroughput ? a.report.t_iter : a.report.c_iter;
  const double vb = objective == Objective::kMaxThroughput ? b.report.t_iter : b.report.c_iter;
  if (va != vb) return va < vb;
  if (a.report.c_iter != b.report.c_iter) return a.report.c_iter < b.report.c_iter;
  const int ga = a.plan.total_gpus(cluster);
  const int gb = b.plan.total_gpus(cluster);
  if (ga != gb) return ga < gb;
  return plan_less(a.plan, b.plan);
}

bool satisfies_constraints(const SimReport& report, const SearchRequest& request) {
  if (request.budget && !(report.c_iter <= request.budget->max_cost_per_iteration)) return false;
  if (request.min_throughput && !(report.throughput() >= request.min_throughput->iterations_per_second)) {
    return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// DP engines

namespace {

struct Rejections {
  bool profiled = false;     // some stage had complete profiles for some type
  bool fits = false;         // some stage fit in memory on some type
  bool had_resources = false;  // some combo fit the pool
  uint64_t budget = 0;
  uint64_t floor = 0;

  void merge(const Rejections& o) {
    profiled = profiled || o.profiled;
    fits = fits || o.fits;
    had_resources = had_resources || o.had_resources;
    budget += o.budget;
    floor += o.floor;
  }
};

// One stage configuration: replica groups with their costs and node demand.
struct Option {
  std::vector<ReplicaGroup> groups;
  StageCost cost;
  std::vector<int> nodes;  // per gpu index
  uint32_t mask = 0;       // gpu types present
  bool bad = false;        // OOM or tp wider than a node (ablation only)
  mutable std::vector<double> boundary;  // [(dst_mask << 1) | same_region]
};

// Shared state of one DP run: fixed (P, mbs, D) and the starting pool.
struct Context {
  const Simulator& sim;
  StageTpTable& table;
  const SearchOptions& opt;
  int P = 1;
  int mbs = 1;
  int D = 1;
  int64_t nb = 1;
  int total_layers = 0;
  std::pair<int, int> bounds{1, 1};
  const std::vector<int>* partition = nullptr;  // fixed stage sizes, or null
  std::vector<std::string> regions;
  std::vector<std::vector<double>> pair_price;  // egress both directions per byte
  int T = 0;
  int R = 0;
  std::vector<int> type_cap;  // max nodes of each type in any region
  std::vector<double> prefix_lb;  // [l]: fastest possible compute of layers 0..l-1
  double stage_rate_lb = 0.0;     // cheapest possible GPU rate of one stage
  double mx_lb = 0.0;             // straggler floor from total GPU-time over the pool
  std::vector<double> work_prefix;  // [l]: cheapest GPU-time of layers 0..l-1
  std::vector<int> gpus_per_node;   // per gpu index
  std::optional<double> budget;
  std::optional<double> floor;
  bool cost_aware = false;
  Objective objective = Objective::kMaxThroughput;
  double incumbent = kInf;  // best objective value known to be achievable
  uint64_t beaten = 0;      // suffixes dropped because the incumbent is better
  Rejections* rej = nullptr;
  std::optional<std::chrono::steady_clock::time_point> deadline;

  void check_deadline() const {
    if (deadline && std::chrono::steady_clock::now() > *deadline) throw SearchTimeout("search time limit exceeded");
  }

  Context(const Simulator& s, StageTpTable& t, const SearchOptions& o) : sim(s), table(t), opt(o) {}

  void set_regions(std::vector<std::string> names) {
    regions = std::move(names);
    R = static_cast<int>(regions.size());
    pair_price.assign(static_cast<size_t>(R), std::vector<double>(static_cast<size_t>(R)));
    for (int a = 0; a < R; ++a) {
      for (int b = 0; b < R; ++b) {
        const auto& ra = regions[static_cast<size_t>(a)];
        const auto& rb = regions[static_cast<size_t>(b)];
        pair_price[static_cast<size_t>(a)][static_cast<size_t>(b)] =
            sim.cluster().egress_price(ra, rb) + sim.cluster().egress_price(rb, ra);
      }
    }
  }

  // Bit-identical to Simulator::boundary_price.
  double price(int64_t bytes, int src, int dst) const {
    return double(D) * double(nb) * double(bytes) *
           pair_price[static_cast<size_t>(src)][static_cast<size_t>(dst)];
  }

  double boundary(const Option& o, uint32_t dst_mask, bool same_region) const {
    if (o.boundary.empty()) o.boundary.assign(size_t{2} << T, -1.0);
    double& slot = o.boundary[(size_t{dst_mask} << 1) | (same_region ? 1u : 0u)];
    if (slot < 0.0) {
      std::vector<ReplicaGroup> dst;
      for (int g = 0; g < T; ++g) {
        if (dst_mask & (1u << g)) dst.push_back({g, 1, 1});
      }
      slot = sim.boundary_time(o.groups, dst, o.cost.boundary_bytes, same_region);
    }
    return slot;
  }

  // Optimistic (t_iter, c_iter) of a pipeline whose stages i..P-1 have the
  // given aggregates and whose stages 0..i-1 cover layers 0..l0-1.
  std::pair<double, double> bound(double sum, double mx, double sync, double upd, double rate, double comm,
                                  int i, int l0) const {
    const double pre = prefix_lb[static_cast<size_t>(l0)];
    const double s = sum + pre;
    double m = std::max({mx, s / P, mx_lb});
    if (i > 0) m = std::max(m, pre / i);
    const double t = iteration_time(s, m, sync, upd, nb);
    return {t, (rate + i * stage_rate_lb) * t + comm};
  }

  // True when an optimistic (t, c) cannot meet a constraint or beat the incumbent.
  bool hopeless(double t, double c) {
    if (floor && t > (1.0 / *floor) * (1.0 + kPruneSlack)) {
      ++rej->floor;
      return true;
    }
    if (budget && c > *budget * (1.0 + kPruneSlack)) {
      ++rej->budget;
      return true;
    }
    if (incumbent < kInf) {
      const double v = objective == Objective::kMaxThroughput ? t : c;
      if (v > incumbent * (1.0 + kPruneSlack)) {
        ++beaten;
        return true;
      }
    }
    return false;
  }

  // Layer counts stage i may take when it starts at l0.
  std::pair<int, int> layer_range(int i, int l0) const {
    if (partition) {
      const int L = (*partition)[static_cast<size_t>(i)];
      return {L, L};
    }
    const int remaining = total_layers - l0;
    const int left = P - i - 1;
    int lo = std::max(bounds.first, remaining - left * bounds.second);
    int hi = std::min(bounds.second, remaining - left * bounds.first);
    if (left == 0) lo = hi = remaining;
    if (lo < bounds.first || hi > bounds.second) return {1, 0};
    return {lo, hi};
  }

  bool fits(const Option& o, const std::vector<int>& pool, int r) const {
    for (int g = 0; g < T; ++g) {
      if (o.nodes[static_cast<size_t>(g)] > pool[static_cast<size_t>(g * R + r)]) return false;
    }
    return true;
  }

  int gpus_after(const Option& o, const std::vector<int>& pool) const {
    int n = 0;
    for (int g = 0; g < T; ++g) {
      int nodes = 0;
      for (int q = 0; q < R; ++q) nodes += pool[static_cast<size_t>(g * R + q)];
      n += (nodes - o.nodes[static_cast<size_t>(g)]) * gpus_per_node[static_cast<size_t>(g)];
    }
    return n;
  }

  void take(const Option& o, const std::vector<int>& pool, int r, std::vector<int>& next) const {
    next = pool;
    for (int g = 0; g < T; ++g) next[static_cast<size_t>(g * R + r)] -= o.nodes[static_cast<size_t>(g)];
  }

  std::vector<int> take(const Option& o, const std::vector<int>& pool, int r) const {
    std::vector<int> next;
    take(o, pool, r, next);
    return next;
  }

  // Regions in find_region_fits order for the given pool.
  std::vector<int> region_order(const std::vector<int>& pool) const {
    std::vector<int> cap(static_cast<size_t>(R), 0);
    for (int g = 0; g < T; ++g) {
      for (int r = 0; r < R; ++r) cap[static_cast<size_t>(r)] += pool[static_cast<size_t>(g * R + r)];
    }
    std::vector<int> order(static_cast<size_t>(R));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return cap[static_cast<size_t>(a)] > cap[static_cast<size_t>(b)];
    });
    return order;
  }
};

// Builds and caches the stage options for (i, l0, L).
class OptionCache {
 public:
  OptionCache(Context& ctx, bool min_tp_only) : ctx_(ctx), min_tp_only_(min_tp_only) {}

  const std::vector<Option>& get(int i, int l0, int L) {
    const int64_t key = (int64_t{i} * (ctx_.total_layers + 1) + l0) * (ctx_.total_layers + 1) + L;
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    return cache_.emplace(key, build(i, l0, L)).first->second;
  }

 private:
  struct Choice {
    int tp;
    StageProfile profile;
    bool bad;
  };

  std::vector<Option> build(int i, int l0, int L) {
    const auto& sim = ctx_.sim;
    const auto& h = ctx_.opt.heuristics;
    const StageSignature sig{ctx_.P, i, l0, L, ctx_.mbs};
    std::vector<int> types;
    std::vector<std::vector<Choice>> choices(static_cast<size_t>(ctx_.T));
    for (int g = 0; g < ctx_.T; ++g) {
      if (ctx_.type_cap[static_cast<size_t>(g)] <= 0) continue;
      const TpEntry& entry = ctx_.table.get(sim, sig, sim.gpu_names()[static_cast<size_t>(g)]);
      if (entry.profiled) ctx_.rej->profiled = true;
      if (entry.min_tp > 0) ctx_.rej->fits = true;
      auto& list = choices[static_cast<size_t>(g)];
      for (const auto& c : entry.choices) {
        if (min_tp_only_ && c.tp != entry.min_tp) continue;
        if (!c.within_node && h.tp_within_node) continue;
        if (!c.fits_memory && h.prune_oom_early) continue;
        auto prof = sim.stage_profile(l0, L, g, c.tp, ctx_.mbs);
        if (!prof) continue;
        list.push_back({c.tp, *prof, !c.within_node || !c.fits_memory});
      }
      if (!list.empty()) types.push_back(g);
    }

    std::vector<Option> out;
    if (types.empty()) return out;
    std::vector<int> counts(types.size(), 0);
    std::vector<size_t> pick(types.size(), 0);
    std::vector<GroupProfile> groups;
    const int in_flight = ctx_.P - i;

    auto emit = [&]() {
      Option o;
      o.nodes.assign(static_cast<size_t>(ctx_.T), 0);
      groups.clear();
      for (size_t k = 0; k < types.size(); ++k) {
        if (counts[k] == 0) continue;
        const int g = types[k];
        const auto& ch = choices[static_cast<size_t>(g)][pick[k]];
        const int n = node_demand(sim.gpu(g), ch.tp, counts[k]);
        if (n > ctx_.type_cap[static_cast<size_t>(g)]) return;
        o.nodes[static_cast<size_t>(g)] = n;
        o.mask |= 1u << g;
        o.bad = o.bad || ch.bad;
        groups.push_back({{g, ch.tp, counts[k]}, ch.profile});
      }
      o.cost = sim.stage_cost(groups, in_flight);
      o.groups.reserve(groups.size());
      for (const auto& gp : groups) o.groups.push_back(gp.group);
      out.push_back(std::move(o));
    };

    // tp picks for the types with non-zero count
    std::function<void(size_t)> pick_tp = [&](size_t k) {
      if (k == types.size()) {
        emit();
        return;
      }
      if (counts[k] == 0) {
        pick[k] = 0;
        pick_tp(k + 1);
        return;
      }
      const size_t n = choices[static_cast<size_t>(types[k])].size();
      for (size_t c = 0; c < n; ++c) {
        pick[k] = c;
        pick_tp(k + 1);
      }
    };
    std::function<void(size_t, int)> split = [&](size_t k, int remaining) {
      if (k + 1 == types.size()) {
        counts[k] = remaining;
        pick_tp(0);
        return;
      }
      for (int c = remaining; c >= 0; --c) {
        counts[k] = c;
        split(k + 1, remaining - c);
      }
    };
    split(0, ctx_.D);
    // Carried (bad) options first, then by compute time so solve can stop early.
    std::vector<size_t> idx(out.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
      if (out[a].bad != out[b].bad) return out[a].bad;
      return out[a].cost.t_compute < out[b].cost.t_compute;
    });
    std::vector<Option> sorted;
    sorted.reserve(out.size());
    for (size_t k : idx) sorted.push_back(std::move(out[k]));
    return sorted;
  }

  Context& ctx_;
  bool min_tp_only_;
  std::unordered_map<int64_t, std::vector<Option>> cache_;
};

// Suffix of a pipeline, stages i..P-1, summarized by the quantities that
// compose monotonically into T_iter and C_iter.
struct Entry {
  double sum = 0.0;
  double mx = 0.0;
  double sync = 0.0;
  double upd = 0.0;
  double rate = 0.0;
  double comm = 0.0;
  const Option* head = nullptr;
  int region = -1;
  int layers = 0;
  int next_state = -1;
  int next_entry = -1;
  bool bad = false;
};

Entry compose(const Context& ctx, const Option& o, int region, int layers, const Entry* next,
              int next_state, int next_entry) {
  Entry n;
  n.head = &o;
  n.region = region;
  n.layers = layers;
  n.next_state = next_state;
  n.next_entry = next_entry;
  n.bad = o.bad;
  if (!next) {
    const double a = o.cost.t_compute;
    n.sum = a + 0.0;
    n.mx = std::max(a, 0.0);
    n.sync = std::max(o.cost.t_sync, 0.0);
    n.upd = std::max(o.cost.t_update, 0.0);
    n.rate = o.cost.gpu_rate + 0.0;
    n.comm = 0.0;
    return n;
  }
  double a = o.cost.t_compute;
  a += ctx.boundary(o, next->head->mask, region == next->region);
  n.sum = a + next->sum;
  n.mx = std::max(a, next->mx);
  n.sync = std::max(o.cost.t_sync, next->sync);
  n.upd = std::max(o.cost.t_update, next->upd);
  n.rate = o.cost.gpu_rate + next->rate;
  n.comm = ctx.price(o.cost.boundary_bytes, region, next->region) + next->comm;
  n.bad = n.bad || next->bad;
  return n;
}

double entry_time(const Entry& e, int64_t nb) { return iteration_time(e.sum, e.mx, e.sync, e.upd, nb); }

// Exact DP: a Pareto frontier of suffix entries per (stage, first layer, pool).
class FrontierDp {
 public:
  explicit FrontierDp(Context& ctx) : ctx_(ctx), options_(ctx, false) {}

  int solve(int i, int l0, const std::vector<int>& pool) {
    if (scratch_.size() < static_cast<size_t>(ctx_.P) + 1) {
      scratch_.resize(static_cast<size_t>(ctx_.P) + 1);
      keys_.resize(static_cast<size_t>(ctx_.P) + 1);
    }
    std::string& key = keys_[static_cast<size_t>(i)];
    key.clear();
    auto put = [&](int v) {
      key.push_back(static_cast<char>(v & 0xff));
      key.push_back(static_cast<char>((v >> 8) & 0xff));
    };
    put(i);
    put(l0);
    for (int v : pool) put(v);
    auto it = memo_.find(key);
    if (it != memo_.end()) return it->second;

    std::vector<Entry> cand;
    const auto& lb = ctx_.prefix_lb;
    const bool cut = ctx_.incumbent < kInf && ctx_.objective == Objective::kMaxThroughput;
    const double cut_at = ctx_.incumbent * (1.0 + kPruneSlack);
    const auto [lo, hi] = ctx_.layer_range(i, l0);
    const auto order = ctx_.region_order(pool);
    for (int L = lo; L <= hi; ++L) {
      const auto& opts = options_.get(i, l0, L);
      const double outside = lb[static_cast<size_t>(l0)] + lb.back() - lb[static_cast<size_t>(l0 + L)];
      for (const auto& o : opts) {
        if (!o.bad && ctx_.incumbent < kInf && ctx_.objective == Objective::kMaxThroughput) {
          const double t = outside + double(ctx_.nb) * o.cost.t_compute;
          if (t > ctx_.incumbent * (1.0 + kPruneSlack)) {
            ++ctx_.beaten;
            break;
          }
        }
        for (int r : order) {
          if (!ctx_.fits(o, pool, r)) continue;
          ctx_.rej->had_resources = true;
          if (i + 1 == ctx_.P) {
            consider(cand, compose(ctx_, o, r, L, nullptr, -1, -1), i, l0);
            continue;
          }
          if (!o.bad) {
            const size_t l1 = static_cast<size_t>(l0 + L);
            const double rest = lb.back() - lb[l1];
            const int gpus_left = ctx_.gpus_after(o, pool);
            if (gpus_left < (ctx_.P - i - 1) * ctx_.D) continue;
            const double rest_mx = double(ctx_.D) * (ctx_.work_prefix.back() - ctx_.work_prefix[l1]) /
                                   double(gpus_left) * (1.0 - 1e-12);
            const double a = o.cost.t_compute;
            const auto [t, c] = ctx_.bound(a + rest, std::max({a, rest / (ctx_.P - i - 1), rest_mx}), o.cost.t_sync,
                                           o.cost.t_update, o.cost.gpu_rate + (ctx_.P - i - 1) * ctx_.stage_rate_lb,
                                           0.0, i, l0);
            if (ctx_.hopeless(t, c)) continue;
          }
          auto& next_pool = scratch_[static_cast<size_t>(i) + 1];
          ctx_.take(o, pool, r, next_pool);
          const int sid = solve(i + 1, l0 + L, next_pool);
          const auto& next = states_[static_cast<size_t>(sid)];
          const double head = lb[static_cast<size_t>(l0)] + o.cost.t_compute;
          for (size_t k = 0; k < next.size(); ++k) {
            if (cut && !o.bad && !next[k].bad && head + pace(next[k]) > cut_at) {
              ++ctx_.beaten;
              break;
            }
            consider(cand, compose(ctx_, o, r, L, &next[k], sid, static_cast<int>(k)), i, l0);
          }
        }
      }
    }
    prune(cand, i > 0);
    if ((states_.size() & 1023) == 0) ctx_.check_deadline();
    // Carried entries first, then by pace so callers can stop early.
    std::stable_sort(cand.begin(), cand.end(), [&](const Entry& a, const Entry& b) {
      if (a.bad != b.bad) return a.bad;
      return pace(a) < pace(b);
    });
    const int id = static_cast<int>(states_.size());
    states_.push_back(std::move(cand));
    // Sub-solves reuse deeper buffers only, so `key` is intact here.
    memo_.emplace(key, id);
    return id;
  }

  // Lower bound on the suffix's contribution to T_iter.
  double pace(const Entry& e) const { return e.sum + double(ctx_.nb - 1) * e.mx; }

  const std::vector<Entry>& state(int id) const { return states_[static_cast<size_t>(id)]; }
  size_t num_states() const { return states_.size(); }

  std::vector<StageAssignment> reconstruct(int sid, int eidx, int l0) const {
    std::vector<StageAssignment> stages;
    while (sid >= 0) {
      const Entry& e = states_[static_cast<size_t>(sid)][static_cast<size_t>(eidx)];
      StageAssignment s;
      s.first_layer = l0;
      s.layer_count = e.layers;
      s.region = ctx_.regions[static_cast<size_t>(e.region)];
      for (const auto& g : e.head->groups) {
        for (int k = 0; k < g.count; ++k) {
          s.replicas.push_back({ctx_.sim.gpu_names()[static_cast<size_t>(g.gpu)], g.tp, {}});
        }
      }
      stages.push_back(std::move(s));
      l0 += e.layers;
      sid = e.next_state;
      eidx = e.next_entry;
    }
    return stages;
  }

 private:
  // Drops suffixes that can no longer meet a constraint or beat the incumbent.
  void consider(std::vector<Entry>& cand, const Entry& e, int i, int l0) {
    if (!e.bad) {
      const auto [t, c] = ctx_.bound(e.sum, e.mx, e.sync, e.upd, e.rate, e.comm, i, l0);
      if (ctx_.hopeless(t, c)) return;
    }
    cand.push_back(e);
  }

  bool dominates(const Entry& k, const Entry& e) const {
    if (!(k.sum <= e.sum && k.mx <= e.mx && k.sync <= e.sync && k.upd <= e.upd)) return false;
    if (ctx_.cost_aware) return k.rate <= e.rate && k.comm <= e.comm;
    if (k.sum < e.sum || k.mx < e.mx || k.sync < e.sync || k.upd < e.upd) return true;
    return std::tie(k.rate, k.comm) <= std::tie(e.rate, e.comm);
  }

  void prune(std::vector<Entry>& v, bool by_head) const {
    auto group = [&](const Entry& e) {
      const uint64_t head = by_head ? (uint64_t(uint32_t(e.region)) << 32) | e.head->mask : 0;
      return std::make_pair(e.bad, head);
    };
    std::stable_sort(v.begin(), v.end(), [&](const Entry& a, const Entry& b) {
      const auto ga = group(a);
      const auto gb = group(b);
      if (ga != gb) return ga < gb;
      return std::tie(a.sum, a.mx, a.sync, a.upd, a.rate, a.comm) <
             std::tie(b.sum, b.mx, b.sync, b.upd, b.rate, b.comm);
    });
    std::vector<Entry> out;
    out.reserve(v.size());
    size_t group_start = 0;
    for (size_t k = 0; k < v.size(); ++k) {
      if (k > 0 && group(v[k]) != group(v[k - 1])) group_start = out.size();
      bool dominated = false;
      for (size_t j = group_start; j < out.size(); ++j) {
        if (dominates(out[j], v[k])) {
          dominated = true;
          break;
        }
      }
      if (!dominated) out.push_back(v[k]);
    }
    v = std::move(out);
  }

  Context& ctx_;
  OptionCache options_;
  std::unordered_map<std::string, int> memo_;
  std::deque<std::vector<Entry>> states_;
  std::vector<std::vector<int>> scratch_;  // per stage: pool passed to the next stage
  std::vector<std::string> keys_;          // per stage: memo key under construction
};

// Literal scalar DP: one best suffix per (stage, pool, region, quantized
// budget), first-fit region, straggler-approximation loop for the budget.
class ListingDp {
 public:
  struct Sub {
    Entry summary;  // head/region of the first stage; pointers unused
    std::vector<std::pair<const Option*, int>> stages;  // (option, region) per stage
  };

  explicit ListingDp(Context& ctx) : ctx_(ctx), options_(ctx, true) {
    int l0 = 0;
    for (int L : *ctx_.partition) {
      first_.push_back(l0);
      l0 += L;
    }
  }

  // budget_q < 0 means unconstrained.
  std::optional<Sub> solve(int i, const std::vector<int>& pool, int region, int64_t budget_q) {
    std::string key;
    auto put = [&](int64_t v, int bytes) {
      for (int b = 0; b < bytes; ++b) key.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
    };
    put(i, 2);
    put(region, 2);
    put(budget_q, 8);
    for (int v : pool) put(v, 2);
    auto it = memo_.find(key);
    if (it != memo_.end()) return it->second;

    const double budget = budget_q < 0 ? kInf : double(budget_q) * ctx_.opt.budget_quantum;
    const int L = (*ctx_.partition)[static_cast<size_t>(i)];
    std::optional<Sub> best;
    auto better = [&](const Sub& a) {
      if (!best) return true;
      const double ta = entry_time(a.summary, ctx_.nb);
      const double tb = entry_time(best->summary, ctx_.nb);
      if (ta != tb) return ta < tb;
      return cost(a.summary) < cost(best->summary);
    };

    for (const auto& o : options_.get(i, first_[static_cast<size_t>(i)], L)) {
      if (o.bad) continue;
      const int r = first_fit(o, pool, region);
      if (r < 0) continue;
      ctx_.rej->had_resources = true;
      const double t_i = o.cost.t_compute;
      if (i + 1 == ctx_.P) {
        Sub s;
        s.summary = compose(ctx_, o, r, L, nullptr, -1, -1);
        s.stages.push_back({&o, r});
        if (cost(s.summary) <= budget) {
          if (better(s)) best = std::move(s);
        } else {
          ++ctx_.rej->budget;
        }
        continue;
      }
      const auto rest_pool = ctx_.take(o, pool, r);
      double assumed = t_i;
      for (int iter = 0; iter < ctx_.opt.max_straggler_iters; ++iter) {
        const double c_i = o.cost.gpu_rate * double(ctx_.nb) * assumed;
        const double c_rem = budget - c_i;
        if (c_rem < 0.0) {
          ++ctx_.rej->budget;
          break;
        }
        const int64_t q = budget_q < 0 ? -1 : static_cast<int64_t>(std::floor(c_rem / ctx_.opt.budget_quantum));
        auto next = solve(i + 1, rest_pool, r, q);
        if (!next) break;
        if (next->summary.mx <= assumed) {
          Sub s;
          s.summary = compose(ctx_, o, r, L, &next->summary, -1, -1);
          s.summary.head = &o;
          s.stages.push_back({&o, r});
          s.stages.insert(s.stages.end(), next->stages.begin(), next->stages.end());
          if (cost(s.summary) <= budget) {
            if (better(s)) best = std::move(s);
          } else {
            ++ctx_.rej->budget;
          }
          break;
        }
        assumed = next->summary.mx;
      }
    }
    if ((memo_.size() & 1023) == 0) ctx_.check_deadline();
    memo_.emplace(std::move(key), best);
    return best;
  }

  double cost(const Entry& e) const { return e.rate * entry_time(e, ctx_.nb) + e.comm; }

  std::vector<StageAssignment> reconstruct(const Sub& s, int stage_index) const {
    std::vector<StageAssignment> stages;
    for (size_t k = 0; k < s.stages.size(); ++k) {
      const auto& [o, r] = s.stages[k];
      const size_t i = static_cast<size_t>(stage_index) + k;
      StageAssignment a;
      a.first_layer = first_[i];
      a.layer_count = (*ctx_.partition)[i];
      a.region = ctx_.regions[static_cast<size_t>(r)];
      for (const auto& g : o->groups) {
        for (int c = 0; c < g.count; ++c) {
          a.replicas.push_back({ctx_.sim.gpu_names()[static_cast<size_t>(g.gpu)], g.tp, {}});
        }
      }
      stages.push_back(std::move(a));
    }
    return stages;
  }

  size_t num_states() const { return memo_.size(); }

 private:
  int first_fit(const Option& o, const std::vector<int>& pool, int current) const {
    if (current >= 0 && ctx_.fits(o, pool, current)) return current;
    for (int r : ctx_.region_order(pool)) {
      if (ctx_.fits(o, pool, r)) return r;
    }
    return -1;
  }

  Context& ctx_;
  OptionCache options_;
  std::vector<int> first_;
  std::unordered_map<std::string, std::optional<Sub>> memo_;
};

std::vector<int> dense_pool(const ResourcePool& pool, const Simulator& sim,
                            const std::vector<std::string>& regions) {
  const size_t R = regions.size();
  std::vector<int> out(sim.gpu_names().size() * R, 0);
  for (size_t g = 0; g < sim.gpu_names().size(); ++g) {
    for (size_t r = 0; r < R; ++r) out[g * R + r] = pool.count(sim.gpu_names()[g], regions[r]);
  }
  return out;
}

std::vector<std::string> pool_regions(const ResourcePool& pool, const ClusterSpec& cluster) {
  auto regions = cluster.regions();
  for (const auto& [key, n] : pool.counts()) {
    if (std::find(regions.begin(), regions.end(), key.second) == regions.end()) regions.push_back(key.second);
  }
  std::sort(regions.begin(), regions.end());
  return regions;
}

void init_context(Context& ctx, const ResourcePool& pool, int P, int mbs, int D) {
  const auto& job = ctx.sim.job();
  ctx.P = P;
  ctx.mbs = mbs;
  ctx.D = D;
  ctx.nb = job.global_batch_size / (int64_t{D} * mbs);
  ctx.total_layers = job.total_layers();
  ctx.bounds = stage_size_bounds(ctx.total_layers, P, ctx.opt.partition_slack);
  ctx.T = static_cast<int>(ctx.sim.gpu_names().size());
  ctx.set_regions(pool_regions(pool, ctx.sim.cluster()));
  ctx.type_cap.assign(static_cast<size_t>(ctx.T), 0);
  for (int g = 0; g < ctx.T; ++g) {
    for (const auto& r : ctx.regions) {
      ctx.type_cap[static_cast<size_t>(g)] =
          std::max(ctx.type_cap[static_cast<size_t>(g)], pool.count(ctx.sim.gpu_names()[static_cast<size_t>(g)], r));
    }
  }
  // Memory is ignored here, so the bound holds with or without OOM pruning.
  // Every stage runs D replicas whose time times tp is at least the cheapest
  // GPU-time of its layers, so the GPUs of all stages bound the straggler.
  ctx.prefix_lb.assign(static_cast<size_t>(ctx.total_layers) + 1, 0.0);
  double work = 0.0;
  for (int l = 0; l < ctx.total_layers; ++l) {
    double best = kInf;
    double best_work = kInf;
    for (int g = 0; g < ctx.T; ++g) {
      if (ctx.type_cap[static_cast<size_t>(g)] <= 0) continue;
      for (int tp : ctx.sim.tp_degrees(g)) {
        if (ctx.opt.heuristics.tp_within_node && tp > ctx.sim.gpu(g).gpus_per_node) continue;
        if (auto prof = ctx.sim.stage_profile(l, 1, g, tp, mbs)) {
          best = std::min(best, prof->t_fwd + prof->t_bwd);
          best_work = std::min(best_work, (prof->t_fwd + prof->t_bwd) * tp);
        }
      }
    }
    // A layer without any profile makes every plan fail later; stay optimistic.
    if (best == kInf) best = best_work = 0.0;
    ctx.prefix_lb[static_cast<size_t>(l) + 1] = ctx.prefix_lb[static_cast<size_t>(l)] + best;
    work += best_work;
    ctx.work_prefix.push_back(work);
  }
  ctx.work_prefix.insert(ctx.work_prefix.begin(), 0.0);
  ctx.gpus_per_node.clear();
  for (int g = 0; g < ctx.T; ++g) ctx.gpus_per_node.push_back(ctx.sim.gpu(g).gpus_per_node);
  int gpus = 0;
  for (const auto& [key, n] : pool.counts()) gpus += n * ctx.sim.cluster().gpu(key.first).gpus_per_node;
  ctx.mx_lb = gpus > 0 ? double(D) * work / double(gpus) * (1.0 - 1e-12) : 0.0;
  double rate = kInf;
  for (int g = 0; g < ctx.T; ++g) {
    if (ctx.type_cap[static_cast<size_t>(g)] > 0) rate = std::min(rate, ctx.sim.gpu(g).price_per_gpu_hour / 3600.0);
  }
  ctx.stage_rate_lb = rate == kInf ? 0.0 : D * rate;
}

SubSolution make_sub(const Entry& e, int64_t nb, std::vector<StageAssignment> stages) {
  SubSolution s;
  s.t_iter = entry_time(e, nb);
  s.straggler = e.mx;
  s.cost = e.rate * s.t_iter + e.comm;
  s.stages = std::move(stages);
  return s;
}

}  // namespace

std::optional<SubSolution> solve_dp(const Simulator& sim, StageTpTable& tp_table,
                                    const std::vector<int>& partition, int mbs, int dp,
                                    int stage_index, const ResourcePool& pool,
                                    std::optional<double> budget,
                                    const std::optional<std::string>& current_region,
                                    const SearchOptions& options) {
  const int P = static_cast<int>(partition.size());
  if (stage_index < 0 || stage_index >= P || dp < 1 || mbs < 1) return std::nullopt;
  if (std::accumulate(partition.begin(), partition.end(), 0) != sim.job().total_layers()) return std::nullopt;
  if (sim.job().global_batch_size % (int64_t{dp} * mbs) != 0) return std::nullopt;

  Rejections rej;
  Context ctx(sim, tp_table, options);
  init_context(ctx, pool, P, mbs, dp);
  ctx.partition = &partition;
  ctx.budget = budget;
  ctx.cost_aware = budget.has_value();
  ctx.rej = &rej;
  const auto dense = dense_pool(pool, sim, ctx.regions);
  const int l0 = std::accumulate(partition.begin(), partition.begin() + stage_index, 0);

  if (options.strategy == DpStrategy::kListing) {
    ListingDp dpt(ctx);
    int region = -1;
    if (current_region) {
      auto it = std::find(ctx.regions.begin(), ctx.regions.end(), *current_region);
      if (it != ctx.regions.end()) region = static_cast<int>(it - ctx.regions.begin());
    }
    const int64_t q = budget ? static_cast<int64_t>(std::floor(*budget / options.budget_quantum)) : -1;
    if (budget && *budget < 0.0) return std::nullopt;
    auto sub = dpt.solve(stage_index, dense, region, q);
    if (!sub) return std::nullopt;
    return make_sub(sub->summary, ctx.nb, dpt.reconstruct(*sub, stage_index));
  }

  FrontierDp dpt(ctx);
  const int sid = dpt.solve(stage_index, l0, dense);
  const auto& entries = dpt.state(sid);
  int best = -1;
  double best_t = kInf;
  double best_c = kInf;
  for (size_t k = 0; k < entries.size(); ++k) {
    const auto& e = entries[k];
    if (e.bad) continue;
    const double t = entry_time(e, ctx.nb);
    const double c = e.rate * t + e.comm;
    if (budget && !(c <= *budget)) continue;
    if (t < best_t || (t == best_t && c < best_c)) {
      best = static_cast<int>(k);
      best_t = t;
      best_c = c;
    }
  }
  if (best < 0) return std::nullopt;
  return make_sub(entries[static_cast<size_t>(best)], ctx.nb, dpt.reconstruct(sid, best, l0));
}

// ---------------------------------------------------------------------------
// Search driver

namespace {

struct Task {
  int P = 1;
  int mbs = 1;
  std::vector<int> partition;  // kListing only
};

struct TaskOutput {
  std::vector<RankedPlan> plans;
  Rejections rej;
  uint64_t dp_runs = 0;
  uint64_t dp_states = 0;
  uint64_t candidates = 0;
};

struct SearchSetup {
  const SearchRequest& request;
  const Simulator& sim;
  StageTpTable& table;
  const SearchOptions& options;
  const ResourcePool& pool;
  std::vector<std::string> regions;
  std::vector<int> dense;
  int total_gpus = 0;
  std::optional<std::chrono::steady_clock::time_point> deadline;
  // Objective values of the best verified plans so far, across tasks; at most top_n.
  mutable std::mutex mu;
  mutable std::multiset<double> best_values;

  size_t wanted() const { return static_cast<size_t>(std::max(1, options.top_n)); }
  // Value every result must beat or tie: the top_n-th best seen, or `local` for top 1.
  double known(double local) const {
    std::lock_guard<std::mutex> lock(mu);
    double v = best_values.size() >= wanted() ? *std::prev(best_values.end()) : kInf;
    if (wanted() == 1) v = std::min(v, local);
    return v;
  }
  void offer(double v) const {
    std::lock_guard<std::mutex> lock(mu);
    best_values.insert(v);
    if (best_values.size() > wanted()) best_values.erase(std::prev(best_values.end()));
  }
};

double objective_value(const SimReport& r, Objective o) {
  return o == Objective::kMaxThroughput ? r.t_iter : r.c_iter;
}

// Smallest possible sum of per-microbatch stage times: every layer on its
// fastest admissible (type, tp). Infinite when some layer has no profile.
double fastest_compute_sum(const SearchSetup& s, int mbs) {
  const auto& sim = s.sim;
  const int total = sim.job().total_layers();
  double sum = 0.0;
  for (int l = 0; l < total; ++l) {
    double best = kInf;
    for (size_t g = 0; g < sim.gpu_names().size(); ++g) {
      bool present = false;
      for (const auto& r : s.regions) present = present || s.pool.count(sim.gpu_names()[g], r) > 0;
      if (!present) continue;
      for (int tp : sim.tp_degrees(static_cast<int>(g))) {
        if (s.options.heuristics.tp_within_node && tp > sim.gpu(static_cast<int>(g)).gpus_per_node) continue;
        auto prof = sim.stage_profile(l, 1, static_cast<int>(g), tp, mbs);
        if (prof) best = std::min(best, prof->t_fwd + prof->t_bwd);
      }
    }
    sum += best;
  }
  return sum;
}

double cheapest_gpu_rate(const SearchSetup& s) {
  double best = kInf;
  for (size_t g = 0; g < s.sim.gpu_names().size(); ++g) {
    bool present = false;
    for (const auto& r : s.regions) present = present || s.pool.count(s.sim.gpu_names()[g], r) > 0;
    if (present) best = std::min(best, s.sim.gpu(static_cast<int>(g)).price_per_gpu_hour / 3600.0);
  }
  return best;
}

class TaskRunner {
 public:
  TaskRunner(const SearchSetup& setup, const Task& task) : s_(setup), task_(task) {}

  TaskOutput run() {
    const auto& job = s_.sim.job();
    const int64_t total_mb = job.global_batch_size / task_.mbs;
    std::vector<int> dps;
    for (int64_t d = 1; d <= total_mb; ++d) {
      if (total_mb % d == 0 && d * task_.P <= s_.total_gpus) dps.push_back(static_cast<int>(d));
    }
    const Objective obj = s_.request.objective;
    if (obj == Objective::kMaxThroughput) std::reverse(dps.begin(), dps.end());

    const double s_min = fastest_compute_sum(s_, task_.mbs);
    const double rate_min = cheapest_gpu_rate(s_);
    auto lower_bound = [&](int D) {
      const int64_t nb = job.global_batch_size / (int64_t{D} * task_.mbs);
      const double t = s_min + double(nb - 1) * (s_min / task_.P);
      if (obj == Objective::kMaxThroughput) return t;
      return double(task_.P) * double(D) * rate_min * t;
    };

    const bool early = s_.options.heuristics.dp_sweep_early_stop;
    double best = kInf;
    int stale = 0;
    for (size_t k = 0; k < dps.size(); ++k) {
      bool beaten = false;
      const auto value = run_dp(dps[k], s_.known(best), beaten);
      if (value || beaten) {
        if (value && *value < best) {
          best = *value;
          stale = 0;
        } else {
          ++stale;
        }
      }
      if (!early || s_.known(best) == kInf || k + 1 == dps.size() || stale < s_.options.sweep_patience) continue;
      if (!s_.options.bounded_stop || lower_bound(dps[k + 1]) * (1.0 - 1e-12) > s_.known(best)) break;
    }
    return std::move(out_);
  }

 private:
  // Runs one DP for degree D; returns the best objective value found.
  std::optional<double> run_dp(int D, double incumbent, bool& beaten) {
    Context ctx(s_.sim, s_.table, s_.options);
    init_context(ctx, s_.pool, task_.P, task_.mbs, D);
    const auto& req = s_.request;
    if (req.budget) ctx.budget = req.budget->max_cost_per_iteration;
    if (req.min_throughput) ctx.floor = req.min_throughput->iterations_per_second;
    ctx.objective = req.objective;
    ctx.cost_aware = req.objective == Objective::kMinCostPerIteration || req.budget.has_value();
    ctx.incumbent = incumbent;
    ctx.deadline = s_.deadline;
    ctx.rej = &out_.rej;
    ++out_.dp_runs;

    struct Cand {
      double value;
      double cost;
      std::vector<StageAssignment> stages;
    };
    std::vector<Cand> cands;
    auto accept = [&](double t, double c) {
      if (req.budget && !(c <= req.budget->max_cost_per_iteration)) {
        ++out_.rej.budget;
        return false;
      }
      if (req.min_throughput && !((t > 0.0 ? 1.0 / t : 0.0) >= req.min_throughput->iterations_per_second)) {
        ++out_.rej.floor;
        return false;
      }
      return true;
    };

    if (s_.options.strategy == DpStrategy::kListing) {
      ctx.partition = &task_.partition;
      ListingDp dpt(ctx);
      const int64_t q = req.budget ? static_cast<int64_t>(std::floor(req.budget->max_cost_per_iteration /
                                                                     s_.options.budget_quantum))
                                   : -1;
      std::optional<ListingDp::Sub> sub;
      if (!req.budget || req.budget->max_cost_per_iteration >= 0.0) sub = dpt.solve(0, s_.dense, -1, q);
      out_.dp_states += dpt.num_states();
      if (sub) {
        ++out_.candidates;
        const double t = entry_time(sub->summary, ctx.nb);
        const double c = dpt.cost(sub->summary);
        if (accept(t, c)) {
          cands.push_back({obj_value(t, c), c, dpt.reconstruct(*sub, 0)});
        }
      }
    } else {
      FrontierDp dpt(ctx);
      const int sid = dpt.solve(0, 0, s_.dense);
      out_.dp_states += dpt.num_states();
      const auto& entries = dpt.state(sid);
      std::vector<std::pair<std::pair<double, double>, size_t>> order;
      for (size_t k = 0; k < entries.size(); ++k) {
        const auto& e = entries[k];
        if (e.bad) continue;
        ++out_.candidates;
        const double t = entry_time(e, ctx.nb);
        const double c = e.rate * t + e.comm;
        if (!accept(t, c)) continue;
        order.push_back({{obj_value(t, c), c}, k});
      }
      std::sort(order.begin(), order.end());
      const size_t n = static_cast<size_t>(std::max(1, s_.options.top_n));
      for (size_t k = 0; k < order.size(); ++k) {
        if (k >= n && order[k].first != order[n - 1].first) break;
        cands.push_back({order[k].first.first, order[k].first.second,
                         dpt.reconstruct(sid, static_cast<int>(order[k].second), 0)});
      }
    }

    beaten = ctx.beaten > 0;
    std::optional<double> best;
    for (auto& c : cands) {
      Plan plan;
      plan.mbs = task_.mbs;
      plan.dp_degree = D;
      plan.stages = std::move(c.stages);
      plan = canonical(std::move(plan));
      if (std::any_of(out_.plans.begin(), out_.plans.end(), [&](const RankedPlan& p) { return p.plan == plan; })) {
        continue;
      }
      if (!validate_plan(plan, s_.sim.job(), s_.sim.cluster(), s_.pool).empty()) continue;
      SimReport rep = s_.sim.simulate(plan, false);
      if (rep.oom || !satisfies_constraints(rep, req)) continue;
      const double v = objective_value(rep, req.objective);
      if (!best || v < *best) best = v;
      s_.offer(v);
      out_.plans.push_back({std::move(plan), std::move(rep)});
    }
    return best;
  }

  double obj_value(double t, double c) const {
    return s_.request.objective == Objective::kMaxThroughput ? t : c;
  }

  const SearchSetup& s_;
  const Task& task_;
  TaskOutput out_;
};

InfeasibleReason dominant_reason(const Rejections& r) {
  if (r.budget > 0 && r.budget >= r.floor) return InfeasibleReason::kBudget;
  if (r.floor > 0) return InfeasibleReason::kThroughputFloor;
  if (!r.profiled) return InfeasibleReason::kMissingProfiles;
  if (!r.fits) return InfeasibleReason::kOutOfMemory;
  return InfeasibleReason::kNoResources;
}

}  // namespace

SearchResult plan_search(const SearchRequest& request, const JobSpec& job, const ClusterSpec& cluster,
                         const ProfileStore& store, const SearchOptions& options,
                         StageTpTable& tp_table) {
  const auto start = std::chrono::steady_clock::now();
  const Simulator sim(job, cluster, store);
  const ResourcePool pool = request.quotas ? pool_min(*request.quotas, cluster.pool()) : cluster.pool();

  SearchSetup setup{request, sim, tp_table, options, pool, {}, {}, 0, {}, {}, {}};
  setup.regions = pool_regions(pool, cluster);
  if (options.time_limit_seconds > 0.0) {
    setup.deadline = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                 std::chrono::duration<double>(options.time_limit_seconds));
  }
  setup.dense = dense_pool(pool, sim, setup.regions);
  int total_nodes = 0;
  for (const auto& [key, n] : pool.counts()) {
    total_nodes += n;
    setup.total_gpus += n * cluster.gpu(key.first).gpus_per_node;
  }

  const int total_layers = job.total_layers();
  int p_max = std::min(total_layers, total_nodes);
  if (options.max_stages > 0) p_max = std::min(p_max, options.max_stages);
  std::vector<int> mbs_set = job.allowed_microbatch_sizes;
  std::sort(mbs_set.begin(), mbs_set.end());
  mbs_set.erase(std::unique(mbs_set.begin(), mbs_set.end()), mbs_set.end());

  std::vector<Task> tasks;
  for (int P = 1; P <= p_max; ++P) {
    for (int mbs : mbs_set) {
      if (mbs < 1 || job.global_batch_size % mbs != 0) continue;
      if (options.strategy == DpStrategy::kListing) {
        for (auto& part : enumerate_partitions(total_layers, P, options.partition_slack)) {
          tasks.push_back({P, mbs, std::move(part)});
        }
      } else {
        tasks.push_back({P, mbs, {}});
      }
    }
  }

  std::vector<TaskOutput> outputs(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (size_t k = next++; k < tasks.size(); k = next++) {
      try {
        outputs[k] = TaskRunner(setup, tasks[k]).run();
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  size_t threads = options.threads > 0 ? static_cast<size_t>(options.threads)
                                       : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, std::max<size_t>(1, tasks.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool_threads;
    for (size_t t = 0; t < threads; ++t) pool_threads.emplace_back(worker);
    for (auto& t : pool_threads) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  SearchResult result;
  Rejections rej;
  for (auto& o : outputs) {
    rej.merge(o.rej);
    result.stats.dp_runs += o.dp_runs;
    result.stats.dp_states += o.dp_states;
    result.stats.candidates += o.candidates;
    for (auto& p : o.plans) result.plans.push_back(std::move(p));
  }
  result.stats.tasks = tasks.size();
  std::sort(result.plans.begin(), result.plans.end(), [&](const RankedPlan& a, const RankedPlan& b) {
    return ranks_before(a, b, request.objective, cluster);
  });
  result.plans.erase(std::unique(result.plans.begin(), result.plans.end(),
                                 [](const RankedPlan& a, const RankedPlan& b) { return a.plan == b.plan; }),
                     result.plans.end());
  if (result.plans.size() > static_cast<size_t>(std::max(1, options.top_n))) {
    result.plans.resize(static_cast<size_t>(std::max(1, options.top_n)));
  }
  result.stats.tp_table = tp_table.stats();
  result.stats.search_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (result.plans.empty()) {
    if (total_nodes == 0 || p_max < 1) throw NoFeasiblePlan(InfeasibleReason::kNoResources);
    throw NoFeasiblePlan(dominant_reason(rej));
  }
  return result;
}

SearchResult plan_search(const SearchRequest& request, const JobSpec& job, const ClusterSpec& cluster,
                         const ProfileStore& store, const SearchOptions& options) {
  StageTpTable table;
  return plan_search(request, job, cluster, store, options, table);
}

}  // namespace hetplan
