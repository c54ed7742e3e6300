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

#ifndef D2TREE_OVERLAY_HPP_
#define D2TREE_OVERLAY_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "d2tree/simnet.hpp"
#include "d2tree/types.hpp"

namespace d2 {

enum class Role : std::uint8_t { kInternal, kLeaf, kBucketMember };

const char* to_string(Role role);

/// Per-node share of a hypernode's distributed routing table.
struct HypernodeSlot {
  std::uint32_t rank = 0;  // 1-based, left to right inside the hypernode
  OptNode far_left;        // ~2^rank positions to the left
  OptNode far_right;
  OptNode rank_prev;       // level neighbour at distance 1
  OptNode rank_next;
  NodeId max_rank;         // member with the largest rank

  bool operator==(const HypernodeSlot&) const = default;
};

struct Links {
  OptNode parent;
  OptNode left_child;
  OptNode right_child;
  OptNode inorder_prev;
  OptNode inorder_next;
  std::vector<OptNode> routing_left;   // [i] is 2^i positions to the left
  std::vector<OptNode> routing_right;
  OptNode bucket_rep;
  OptNode bucket_prev;
  OptNode bucket_next;
  OptNode bucket_head;  // leaves only
  OptNode bucket_tail;  // leaves only
  std::optional<HypernodeSlot> hyper;

  bool operator==(const Links&) const = default;
  /// Number of individual link fields that differ.
  std::size_t diff(const Links& other) const;
  /// Number of present links, tree and bucket links included.
  std::size_t count() const;
};

struct KeyRange {
  std::optional<Key> lo;
  std::optional<Key> hi;
  bool empty() const { return !lo.has_value(); }
};

struct LevelPosition {
  std::uint32_t level = 0;
  std::uint64_t position = 0;
};

struct OverlayNode {
  NodeId id;
  Role role = Role::kBucketMember;
  bool live = true;
  std::uint32_t level = 0;  // depth in the PBT; bucket members use H
  std::uint64_t pos = 0;    // position at its level, PBT nodes only
  Links links;
  std::vector<Key> store;   // sorted multiset

  // Lazily maintained virtual counters, PBT nodes only.
  std::int64_t vweight = 0;
  std::int64_t vsize = 0;

  // Leaves own their bucket: authoritative member list and exact totals.
  std::vector<NodeId> bucket;
  std::int64_t bucket_elements = 0;

  // Gap tracking between lazy recomputations of vweight, and between
  // element redistributions rooted here. Reset when the node changes slot.
  std::uint64_t updates_since_recompute = 0;
  std::int64_t b_recorded = 0;
  bool recompute_gap_open = false;
  std::uint64_t updates_since_redistribution = 0;
  std::int64_t w_at_redistribution = 0;
  bool redistribution_gap_open = false;

  bool is_pbt() const { return role != Role::kBucketMember; }
  KeyRange range() const;
};

/// A structural or balancing event appended to the metrics stream.
struct OverlayEvent {
  std::string kind;  // join, depart, heal, redistribute_elements, ...
  std::uint64_t op_seq = 0;
  NodeId subject;
  std::uint64_t messages = 0;
  std::uint64_t moved = 0;
  std::uint64_t node_count = 0;
  std::string detail;
};

struct OverlayCounters {
  std::uint64_t weight_recomputations = 0;  // lazy recomputations, height >= 1
  std::uint64_t size_recomputations = 0;
  std::uint64_t element_redistributions = 0;
  std::uint64_t node_redistributions = 0;
  std::uint64_t elements_migrated = 0;
  std::uint64_t nodes_migrated = 0;
  std::uint64_t extensions = 0;
  std::uint64_t contractions = 0;
  std::uint64_t forced_contractions = 0;
  std::uint64_t heals = 0;
  std::uint64_t elements_lost = 0;
  // Gaps between consecutive lazy recomputations at one node, and how many
  // of them fell short of eps_h * b_recorded / 2 subtree updates.
  std::uint64_t recompute_gaps = 0;
  std::uint64_t recompute_gaps_short = 0;
  // Smallest updates / (eps_h * b_recorded / 2) over all gaps; -1 before
  // the first gap closes.
  double worst_gap_fraction = -1;
  // Re-triggers of an element redistribution at one node, and how many
  // came sooner than w / 4 subtree updates after the previous one.
  std::uint64_t retriggers = 0;
  std::uint64_t retriggers_short = 0;
  // Redistributions that left more than one element (bucket member) of
  // difference between two nodes (buckets) of the subtree.
  std::uint64_t element_spread_violations = 0;
  std::uint64_t bucket_spread_violations = 0;
};

/// The D2-tree overlay: a perfect binary tree whose leaves represent buckets
/// of further nodes. This class owns the structure, the simulated network
/// and the element stores; the weights, balance, membership and index
/// modules operate on it.
class Overlay {
 public:
  explicit Overlay(Config config = {});

  /// PBT of `num_pbt_levels` levels (height num_pbt_levels - 1) whose leaves
  /// each own `bucket_size` members. All links and counters exact.
  static Overlay build_initial(std::uint32_t num_pbt_levels,
                               std::uint32_t bucket_size, Config config = {});

  const Config& config() const { return config_; }
  Config& mutable_config() { return config_; }
  SimNet& net() { return net_; }
  const SimNet& net() const { return net_; }

  OpTag next_op(OpKind kind) { return OpTag{kind, ++op_seq_}; }
  std::uint64_t last_op_seq() const { return op_seq_; }

  // --- structure -------------------------------------------------------
  std::uint32_t height() const {
    return static_cast<std::uint32_t>(levels_.size()) - 1;
  }
  std::size_t live_count() const { return live_count_; }
  std::size_t pbt_count() const { return (std::size_t{2} << height()) - 1; }
  const std::vector<NodeId>& level(std::uint32_t l) const { return levels_.at(l); }
  NodeId at(std::uint32_t l, std::uint64_t pos) const { return levels_.at(l).at(pos); }
  NodeId root() const { return levels_.at(0).at(0); }

  OverlayNode& node(NodeId id) { return nodes_.at(id.value); }
  const OverlayNode& node(NodeId id) const { return nodes_.at(id.value); }
  const std::vector<OverlayNode>& all_nodes() const { return nodes_; }
  bool is_live(NodeId id) const;

  /// Representative leaf for a bucket member, the node itself otherwise.
  NodeId anchor(NodeId id) const;
  /// Height of a PBT node (leaves are 0).
  std::uint32_t height_of(NodeId id) const { return height() - node(id).level; }

  std::optional<NodeId> inorder_adjacent(NodeId v, Side side) const;

  /// Nodes in expanded inorder order: PBT inorder with each leaf followed by
  /// its bucket members. This is the global order of element ranges.
  const std::vector<NodeId>& expanded_order() const;
  std::size_t rank_of(NodeId id) const;
  /// Expanded-order span [first, last] of a PBT node's subtree.
  std::pair<std::size_t, std::size_t> subtree_span(NodeId v) const;
  /// PBT nodes and bucket members of v's subtree in expanded order.
  std::vector<NodeId> subtree_nodes(NodeId v) const;
  std::vector<NodeId> subtree_leaves(NodeId v) const;

  // --- links -------------------------------------------------------------
  /// Links a node should hold given the current structure.
  Links expected_links(NodeId id) const;
  /// Routing entries a PBT slot should hold (table mode).
  std::pair<std::vector<OptNode>, std::vector<OptNode>> expected_routing(
      std::uint32_t l, std::uint64_t pos) const;
  HypernodeSlot expected_hyper(std::uint32_t l, std::uint64_t pos) const;
  std::uint32_t hypernode_group_size(std::uint32_t l) const;
  /// Bucket members route along rows: row j holds the member at index j of
  /// every bucket, clamped to the bucket's last member. Nullopt when the
  /// bucket is empty.
  OptNode row_member(std::uint64_t bucket_pos, std::size_t j) const;
  std::size_t bucket_index(NodeId member) const;

  /// Rewrites links of `ids` to their expected values, charging one
  /// LinkUpdate message from `initiator` per changed field.
  std::uint64_t sync_links(NodeId initiator, const std::vector<NodeId>& ids,
                           OpTag tag);
  /// Syncs the row links of every bucket member.
  std::uint64_t sync_member_rows(NodeId initiator, OpTag tag);
  /// Nodes whose links can depend on the slot (l, pos).
  std::vector<NodeId> slot_neighbourhood(std::uint32_t l, std::uint64_t pos) const;
  /// Resets every link without message accounting (construction only).
  void rebuild_all_links();

  /// Fills v's routing table by shifting a level sibling's table; returns
  /// the messages used, or nullopt when no live sibling exists.
  std::optional<std::uint64_t> build_routing_from_sibling(NodeId v, OpTag tag);
  /// Regroups level l into hypernodes and rebuilds the slots.
  void hypernode_group_level(std::uint32_t l);
  /// Rebuilds v's hypernode slot from a level sibling; escalates to the
  /// parent when both siblings are unavailable. Returns messages used.
  std::uint64_t hypernode_reconstruct_links(NodeId v, OpTag tag);

  /// Returns one human-readable line per violated structural invariant.
  std::vector<std::string> validate_topology() const;
  /// Deterministic one-line-per-node dump.
  std::string dump() const;

  // --- elements ------------------------------------------------------------
  /// Inserts into / removes from a node's store, keeping the bucket totals
  /// and the non-empty index current. Does not touch virtual counters.
  void store_insert(NodeId id, Key k);
  bool store_erase(NodeId id, Key k);
  void store_assign(NodeId id, std::vector<Key> keys);
  std::int64_t total_elements() const { return total_elements_; }

  /// Exact local contribution of a PBT node to the weight (elements) or
  /// size (nodes) aggregate. Leaves include their bucket.
  std::int64_t local_weight(NodeId v) const;
  std::int64_t local_size(NodeId v) const;

  /// Where the owner of `alpha` lies relative to `x` in expanded order.
  /// This is the node's knowledge of its own key interval.
  Direction classify(NodeId x, Key alpha) const;
  /// Same decision for a whole bucket: kHere if the owner is the leaf or
  /// one of its members.
  Direction classify_bucket(NodeId leaf, Key alpha) const;

  // --- structural mutation (used by membership) ---------------------------
  NodeId allocate_node();
  /// Places `occupant` in PBT slot (l, pos), updating role and ground truth.
  void place_in_slot(NodeId occupant, std::uint32_t l, std::uint64_t pos);
  void set_levels(std::vector<std::vector<NodeId>> levels);
  void retire(NodeId id);
  void invalidate_order() { order_dirty_ = true; }

  // --- bookkeeping ---------------------------------------------------------
  OverlayCounters& counters() { return counters_; }
  const OverlayCounters& counters() const { return counters_; }
  std::vector<OverlayEvent>& events() { return events_; }
  const std::vector<OverlayEvent>& events() const { return events_; }
  void log_event(OverlayEvent e) { events_.push_back(std::move(e)); }

  /// Node count at the last extension or contraction (0 = none yet).
  std::uint64_t last_structural_count = 0;
  bool redistribution_active = false;

 private:
  void rebuild_order() const;
  void note_store_change(NodeId id, bool was_empty);

  Config config_;
  SimNet net_;
  std::vector<OverlayNode> nodes_;
  std::vector<std::vector<NodeId>> levels_;
  std::size_t live_count_ = 0;
  std::int64_t total_elements_ = 0;
  std::uint64_t op_seq_ = 0;

  mutable bool order_dirty_ = true;
  mutable std::vector<NodeId> order_;
  mutable std::vector<std::size_t> rank_;  // by NodeId::value
  mutable std::set<std::size_t> nonempty_ranks_;

  OverlayCounters counters_;
  std::vector<OverlayEvent> events_;
};

/// Inorder index of PBT slot (l, pos) in a tree of height h.
std::uint64_t inorder_index(std::uint32_t h, std::uint32_t l, std::uint64_t pos);
/// Inverse of inorder_index.
LevelPosition slot_of_inorder(std::uint32_t h, std::uint64_t index);

}  // namespace d2

#endif  // D2TREE_OVERLAY_HPP_
