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

#ifndef D2TREE_MEMBERSHIP_HPP_
#define D2TREE_MEMBERSHIP_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "d2tree/overlay.hpp"
#include "d2tree/weights.hpp"

namespace d2 {

/// |left child| / |v| from virtual sizes.
Rational node_criticality(const Overlay& ov, NodeId v);
/// nc within the closed interval [1/4, 3/4].
bool node_criticality_ok(const Overlay& ov, NodeId v);

/// Highest ancestor of `leaf` (or of a member's leaf) whose node criticality
/// is out of bounds.
std::optional<NodeId> check_and_trigger_nodes(const Overlay& ov, NodeId leaf);

struct NodeRedistributionReport {
  NodeId root;
  std::uint64_t buckets = 0;  // k
  std::uint64_t members = 0;  // s
  std::uint64_t moved = 0;
  std::uint64_t messages = 0;
};

/// Evens out bucket sizes under v: targets floor(s/k), the first s mod k
/// buckets in order get one more. Moved members hand their elements to their
/// predecessor in expanded order and travel empty; the subtree's elements
/// are then redistributed. A root redistribution evaluates extension and
/// contraction.
NodeRedistributionReport redistribute_nodes(Overlay& ov, NodeId v, OpTag tag);

enum class StructuralChange : std::uint8_t { kNone, kExtended, kContracted };
const char* to_string(StructuralChange s);

/// Extension when the common bucket size B >= max(H+1, 2), contraction when
/// B <= H-1; either only once the node count has doubled (halved) since the
/// previous structural change. `forced` skips both guards and contracts.
StructuralChange maybe_extend_contract(Overlay& ov, std::uint64_t common_bucket,
                                       OpTag tag, bool forced = false);

/// Repairs node criticality from `leaf` upwards, then restore_invariants.
void rebalance_nodes(Overlay& ov, NodeId leaf, OpTag tag);

/// Redistributes at the highest node breaking the node-criticality or the
/// density bound until neither is broken anywhere. Violations can only appear where
/// counters changed, so this finds exactly what the path checks would find
/// plus what a redistribution exposed inside its own subtree.
void restore_invariants(Overlay& ov, OpTag tag);

/// A fresh node joins through `via`; it is appended to the bucket of the
/// leaf adjacent to via. Returns the new node.
NodeId join(Overlay& ov, NodeId via, OpTag tag);

/// v leaves the overlay voluntarily.
void depart(Overlay& ov, NodeId v, OpTag tag);

/// `reporter` found `dead` unreachable: the structure is repaired around
/// it. Returns the elements that were stored at the dead node and are lost.
std::vector<Key> heal_failure(Overlay& ov, NodeId reporter, NodeId dead, OpTag tag);

/// Node criticality within [1/4, 3/4] at every internal node, one line per
/// violation.
std::vector<std::string> validate_membership(const Overlay& ov);

}  // namespace d2

#endif  // D2TREE_MEMBERSHIP_HPP_
