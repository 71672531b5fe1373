#pragma once

// Randomized fixtures shared by the unit tests and the acceptance runner.

#include <cstdint>
#include <string>
#include <vector>

#include "hetplan/domain.hpp"
#include "hetplan/planner.hpp"
#include "hetplan/profiles.hpp"

namespace hetplan::testing {

struct RandomInstanceOptions {
  int max_nodes = 8;
  int max_types = 2;
  int max_regions = 2;
  int max_layers = 4;
  // Scales every GPU's memory; below 1 makes OOM configurations common.
  double memory_scale = 1.0;
  // Probability that a (layer, type, tp, mbs) record is left out.
  double missing_profile_rate = 0.03;
  // Also profile tp degrees twice the node width (rejected by H1).
  bool cross_node_tp = true;
};

// Heterogeneous instance within the oracle caps: 1-2 GPU types, 1-2 regions
// (a region may hold two zones), 1-4 layers, random speeds, prices, memory,
// link bandwidths and egress prices. Deterministic in `seed`.
SyntheticInstance random_instance(uint64_t seed, const RandomInstanceOptions& options = {});

// Instance where memory is the binding limit: small GPUs and large activations.
SyntheticInstance tight_memory_instance(uint64_t seed);

// The criterion-6 shapes: opt350-like layers on 16 nodes of one type, or 16+16
// nodes of two types, in one zone. With `cross_node_tp` the profile also
// covers tp 16 and 32, which H1 rejects.
SyntheticInstance opt350_cluster(int num_types, bool cross_node_tp);

// Two regions, two zones each, one GPU type; used for trace replay.
SyntheticInstance two_zone_instance();

}  // namespace hetplan::testing
