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

#ifndef D2TREE_BALANCE_HPP_
#define D2TREE_BALANCE_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "d2tree/overlay.hpp"
#include "d2tree/weights.hpp"

namespace d2 {

/// Density ratio d(p)/d(q) from virtual counters; nullopt stands for an
/// unbounded ratio (q empty, p not).
std::optional<Rational> criticality(const Overlay& ov, NodeId p, NodeId q);

/// The configured bound c as an exact fraction (three decimals).
Rational criticality_bound(const Config& config);

/// True when the brothers p, q break the density bound: one density exceeds
/// c times the other by more than one element per node. Differences within
/// one element per node are the granularity of a uniform spread and never
/// count as a violation.
bool brothers_violate(const Overlay& ov, NodeId p, NodeId q);

/// Scans the ancestor path of u (u's leaf for bucket members) and returns
/// the father of the highest violating brother pair, if any.
std::optional<NodeId> check_and_trigger(const Overlay& ov, NodeId u);

struct MigrationReport {
  NodeId root;
  std::uint64_t nodes = 0;      // m
  std::uint64_t elements = 0;   // n_v
  std::uint64_t moved = 0;
  std::uint64_t transfers = 0;  // batches
  std::uint64_t messages = 0;
  bool deferred = false;
};

/// Spreads the elements of v's subtree uniformly over its nodes in expanded
/// order: the first n mod m nodes hold floor(n/m)+1, the rest floor(n/m).
/// Counters of the subtree become exact; the change is then propagated
/// lazily above v.
MigrationReport redistribute_elements(Overlay& ov, NodeId v, OpTag tag);

/// Runs after a weight update at u: redistributes at the highest violating
/// father until the path satisfies the bound. Returns the reports.
std::vector<MigrationReport> rebalance_elements(Overlay& ov, NodeId u, OpTag tag);

/// Every brother pair in the PBT, one line per violation.
std::vector<std::string> validate_balance(const Overlay& ov);

}  // namespace d2

#endif  // D2TREE_BALANCE_HPP_
