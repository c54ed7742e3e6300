// Copyright 2026 The D2Tree Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#ifndef D2TREE_HARNESS_HPP_
#define D2TREE_HARNESS_HPP_

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "d2tree/overlay.hpp"
#include "d2tree/workload.hpp"
#include "json.hpp"

namespace d2 {

struct OpRecord {
  std::uint64_t seq = 0;
  std::string kind;
  std::int64_t actor = -1;
  std::uint64_t messages = 0;
  std::uint32_t restarts = 0;
  std::int64_t result = -1;  // owner id, found flag or answer size
};

/// Everything a suite reports. JSON carries the nested summary, CSV the
/// per-operation rows; both start with the suite name and master seed.
struct MetricsReport {
  std::string suite;
  std::uint64_t seed = 0;
  nlohmann::json summary = nlohmann::json::object();
  std::vector<OpRecord> ops;

  std::string to_json() const;
  std::string to_csv() const;
  std::string render(const std::string& format) const;
};

/// Node counts, load spread, bucket spread, balancing counters and message
/// totals of an overlay.
nlohmann::json overlay_summary(const Overlay& ov);

struct BuildParams {
  std::uint32_t pbt_levels = 5;
  std::uint32_t bucket_size = 4;
  std::uint64_t elements = 0;
  Key key_space = Key{1} << 32;
  Config config;
};

/// Builds the overlay and spreads `elements` uniform random keys evenly over
/// the expanded order, with exact counters.
Overlay make_overlay(const BuildParams& p, std::uint64_t seed);

/// Elements in expanded order, i.e. the overlay's view of the sorted ledger.
std::vector<Key> flatten(const Overlay& ov);

struct Verdict {
  std::string name;
  bool pass = true;
  std::vector<std::string> details;
};

/// Brute-force checks: topology, lazy weights against the recount, brother
/// density bound, node criticality, global order, unique ownership on
/// sampled keys and, when given, equality with the ledger.
std::vector<Verdict> oracle_suite(const Overlay& ov, const std::multiset<Key>* ledger = nullptr,
                                  std::size_t ownership_probes = 256);
bool all_pass(const std::vector<Verdict>& v);
nlohmann::json to_json(const std::vector<Verdict>& v);

struct RunOptions {
  bool record_ops = true;
  std::uint64_t validate_every = 0;  // 0 = only at the end
  std::size_t max_details = 8;
};

struct RunResult {
  MetricsReport report;
  std::uint64_t mismatches = 0;  // answers differing from the ledger
  std::uint64_t validation_failures = 0;
  std::vector<std::string> details;
  std::multiset<Key> ledger;
};

/// Executes a workload, comparing every answer with a sorted multiset that
/// follows the same updates (minus elements lost to failures).
RunResult run_workload(Overlay& ov, const std::vector<WorkloadOp>& ops, std::uint64_t seed,
                       const RunOptions& opts = {});

/// Lets a live neighbour of every failed node detect and heal it.
std::vector<Key> heal_pending(Overlay& ov, OpTag tag);

/// One search from every node to a key of a uniformly chosen node, repeated
/// over `seeds` overlays; per-node accesses give the congestion.
MetricsReport congestion_experiment(const BuildParams& p, std::uint32_t seeds,
                                    std::uint64_t master);

/// Lazy weight maintenance under M uniform inserts on PBTs of each listed
/// number of levels, preloaded so a height-i subtree holds >= i^4 elements.
MetricsReport weights_experiment(const std::vector<std::uint32_t>& levels, std::uint64_t inserts,
                                 RoutingMode mode, std::uint64_t master);

/// Element balancing under `ops` updates drawn from `dist`.
MetricsReport balance_experiment(const BuildParams& p, std::uint64_t ops, KeyDistribution dist,
                                 std::uint64_t master);

/// Alternating keeps the node count steady; a random walk lets it drift;
/// grow-shrink joins for the first half and departs for the second, which
/// forces extensions and then contractions.
enum class ChurnPattern { kAlternating, kRandomWalk, kGrowShrink };

/// Joins and departures at random nodes, without elements.
MetricsReport membership_experiment(const BuildParams& p, std::uint64_t ops, std::uint64_t master,
                                    ChurnPattern pattern = ChurnPattern::kAlternating);

}  // namespace d2

#endif  // D2TREE_HARNESS_HPP_
