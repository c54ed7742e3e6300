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


#ifndef D2TREE_INDEX_HPP_
#define D2TREE_INDEX_HPP_

#include <cstdint>
#include <optional>
#include <vector>

#include "d2tree/overlay.hpp"

namespace d2 {

struct SearchResult {
  NodeId owner;
  std::uint64_t messages = 0;    // everything charged to the operation
  std::uint64_t horizontal = 0;  // level search, bounces included
  std::uint64_t vertical = 0;    // tree moves and bucket walk
  std::uint32_t restarts = 0;    // restarts after healing a failed node
  std::vector<Key> lost;         // elements lost with healed nodes
};

/// Locates the owner of `alpha` starting at `start`: a level search with
/// the routing links (table or hypernode) followed by a walk up to the
/// common ancestor of the bracketing level nodes and down to the owner.
/// Failed nodes met on the way are healed and the search restarts.
SearchResult search(Overlay& ov, NodeId start, Key alpha, OpTag tag);

struct RangeResult {
  std::vector<Key> keys;  // sorted
  std::uint64_t messages = 0;
  std::uint64_t nodes_visited = 0;
  std::uint32_t restarts = 0;
  std::vector<Key> lost;
};

/// All stored keys in [a, b]. Empty, without messages, when a > b.
RangeResult range_query(Overlay& ov, NodeId start, Key a, Key b, OpTag tag);

struct UpdateResult {
  NodeId owner;
  bool found = true;  // erase only: whether an instance was removed
  std::uint64_t messages = 0;
  std::uint32_t restarts = 0;
  std::vector<Key> lost;
};

/// Stores one instance of `alpha` at its owner, then updates the weights
/// and restores the balance invariants.
UpdateResult insert(Overlay& ov, NodeId start, Key alpha, OpTag tag);
/// Removes one instance of `alpha`; found = false and no other effect when
/// it is absent.
UpdateResult erase(Overlay& ov, NodeId start, Key alpha, OpTag tag);

/// Owner of `alpha` by direct scan of the expanded order: the node holding
/// the greatest stored key <= alpha (when that key sits on several nodes,
/// the first of them if it equals alpha, else the last, so an insert keeps
/// the order sorted); the first non-empty node when
/// alpha is below every key; the leftmost bucket member (or the leftmost
/// leaf when its bucket is empty) when nothing is stored.
NodeId owner_by_scan(const Overlay& ov, Key alpha);

/// Concatenated stores in expanded order are sorted; one line per break.
std::vector<std::string> validate_order(const Overlay& ov);

}  // namespace d2

#endif  // D2TREE_INDEX_HPP_
