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

#include "d2tree/membership.hpp"

#include <algorithm>
#include <bit>
#include <map>
#include <stdexcept>

#include "d2tree/balance.hpp"

namespace d2 {

namespace {

std::uint64_t op_messages(const Overlay& ov, OpTag tag) {
  const auto& per_op = ov.net().stats().per_op;
  auto it = per_op.find(tag.seq);
  return it == per_op.end() ? 0 : it->second;
}

NodeId parent_slot(const Overlay& ov, NodeId v) {
  const auto& n = ov.node(v);
  return ov.at(n.level - 1, n.pos / 2);
}

std::int64_t members_elements(const Overlay& ov, NodeId leaf) {
  std::int64_t e = 0;
  for (NodeId m : ov.node(leaf).bucket) e += static_cast<std::int64_t>(ov.node(m).store.size());
  return e;
}

// Tree and inorder links of a PBT node: what a replacement has to learn.
std::uint64_t tree_link_count(const Links& L) {
  std::uint64_t c = 0;
  for (const OptNode* o : {&L.parent, &L.left_child, &L.right_child, &L.inorder_prev,
                           &L.inorder_next, &L.bucket_head, &L.bucket_tail}) {
    c += o->has_value() ? 1 : 0;
  }
  return c;
}

// Moves every element of `from` into `to`, which is adjacent to it in the
// expanded order (before it when `to_before`).
void hand_off(Overlay& ov, NodeId from, NodeId to, bool to_before, OpTag tag) {
  auto keys = ov.node(from).store;
  if (keys.empty()) return;
  ov.net().bulk(from, to, tag, MsgKind::kElementTransfer, keys.size());
  std::vector<Key> merged;
  const auto& dst = ov.node(to).store;
  if (to_before) {
    merged = dst;
    merged.insert(merged.end(), keys.begin(), keys.end());
  } else {
    merged = keys;
    merged.insert(merged.end(), dst.begin(), dst.end());
  }
  ov.store_assign(from, {});
  ov.store_assign(to, std::move(merged));
}

// Rebuilds the routing state of a node that just entered a PBT slot.
void rebuild_routing(Overlay& ov, NodeId x, OpTag tag) {
  if (ov.config().mode == RoutingMode::kTable) {
    if (!ov.build_routing_from_sibling(x, tag)) {
      auto [left, right] = ov.expected_routing(ov.node(x).level, ov.node(x).pos);
      ov.node(x).links.routing_left = left;
      ov.node(x).links.routing_right = right;
    }
  } else {
    ov.hypernode_reconstruct_links(x, tag);
  }
}

// A node that entered a slot without a predecessor to copy from asks each
// tree neighbour for its link.
void query_tree_links(Overlay& ov, NodeId x, OpTag tag) {
  Links want = ov.expected_links(x);
  for (OptNode o : {want.parent, want.left_child, want.right_child, want.inorder_prev,
                    want.inorder_next}) {
    if (!o || *o == x || !ov.is_live(*o)) continue;
    ov.net().hop(x, *o, tag, MsgKind::kHealProbe);
    ov.net().hop(*o, x, tag, MsgKind::kReply);
  }
}

std::vector<NodeId> neighbourhood_with_bucket(const Overlay& ov, std::uint32_t l,
                                              std::uint64_t pos) {
  auto ids = ov.slot_neighbourhood(l, pos);
  NodeId occ = ov.at(l, pos);
  ids.push_back(occ);
  for (NodeId m : ov.node(occ).bucket) ids.push_back(m);
  return ids;
}

// Reassigns the concatenated keys of `old` (stores in the former expanded
// order) to the current expanded order, each node keeping its count.
void reflow(Overlay& ov, const std::vector<std::pair<NodeId, std::vector<Key>>>& old,
            OpTag tag) {
  std::vector<Key> keys;
  std::vector<NodeId> holder;
  for (const auto& [id, s] : old) {
    keys.insert(keys.end(), s.begin(), s.end());
    holder.insert(holder.end(), s.size(), id);
  }
  std::map<std::pair<NodeId, NodeId>, std::uint64_t> flows;
  std::size_t pos = 0;
  std::vector<std::pair<NodeId, std::vector<Key>>> fresh;
  for (NodeId x : ov.expanded_order()) {
    const std::size_t c = ov.node(x).store.size();
    std::vector<Key> mine(keys.begin() + static_cast<std::ptrdiff_t>(pos),
                          keys.begin() + static_cast<std::ptrdiff_t>(pos + c));
    for (std::size_t i = pos; i < pos + c; ++i) {
      if (holder[i] != x) ++flows[{holder[i], x}];
    }
    pos += c;
    fresh.emplace_back(x, std::move(mine));
  }
  for (auto [pair, count] : flows) {
    ov.net().bulk(pair.first, pair.second, tag, MsgKind::kElementTransfer, count);
    ov.counters().elements_migrated += count;
  }
  for (auto& [x, s] : fresh) {
    if (s != ov.node(x).store) ov.store_assign(x, std::move(s));
  }
}

std::vector<std::pair<NodeId, std::vector<Key>>> snapshot_stores(const Overlay& ov) {
  std::vector<std::pair<NodeId, std::vector<Key>>> out;
  for (NodeId x : ov.expanded_order()) out.emplace_back(x, ov.node(x).store);
  return out;
}

std::vector<NodeId> all_live(const Overlay& ov) {
  std::vector<NodeId> out;
  for (const auto& n : ov.all_nodes()) {
    if (n.live) out.push_back(n.id);
  }
  return out;
}

void finish_structural(Overlay& ov, OpTag tag) {
  ov.sync_links(ov.root(), all_live(ov), tag);
  recompute_subtree_exact(ov, ov.root(), Counter::kWeight);
  recompute_subtree_exact(ov, ov.root(), Counter::kSize);
  ov.last_structural_count = ov.live_count();
}

void extend(Overlay& ov, OpTag tag) {
  const std::uint32_t h = ov.height();
  auto old = snapshot_stores(ov);
  std::vector<std::vector<NodeId>> levels;
  for (std::uint32_t l = 0; l <= h; ++l) levels.push_back(ov.level(l));
  levels.emplace_back();
  std::vector<std::vector<NodeId>> buckets;
  for (NodeId leaf : ov.level(h)) {
    auto members = ov.node(leaf).bucket;
    NodeId left = members[0], right = members[1];
    levels[h + 1].push_back(left);
    levels[h + 1].push_back(right);
    std::vector<NodeId> rest(members.begin() + 2, members.end());
    const std::size_t a = (rest.size() + 1) / 2;
    buckets.emplace_back(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(a));
    buckets.emplace_back(rest.begin() + static_cast<std::ptrdiff_t>(a), rest.end());
    ov.node(leaf).bucket.clear();
    ov.node(leaf).bucket_elements = 0;
  }
  ov.set_levels(levels);
  for (std::uint32_t l = 0; l <= h + 1; ++l) {
    for (std::uint64_t p = 0; p < levels[l].size(); ++p) ov.place_in_slot(levels[l][p], l, p);
  }
  for (std::uint64_t p = 0; p < levels[h + 1].size(); ++p) {
    NodeId leaf = levels[h + 1][p];
    auto& ln = ov.node(leaf);
    ln.bucket = buckets[p];
    for (NodeId m : ln.bucket) {
      ov.node(m).pos = p;
      ov.node(m).level = h + 1;
    }
    ln.bucket_elements = members_elements(ov, leaf);
  }
  for (NodeId m : ov.level(h + 1)) {
    for (NodeId b : ov.node(m).bucket) ov.node(b).role = Role::kBucketMember;
  }
  ov.invalidate_order();
  reflow(ov, old, tag);
  finish_structural(ov, tag);
  ++ov.counters().extensions;
}

void contract(Overlay& ov, OpTag tag) {
  const std::uint32_t h = ov.height();
  auto old = snapshot_stores(ov);
  std::vector<std::vector<NodeId>> levels;
  for (std::uint32_t l = 0; l < h; ++l) levels.push_back(ov.level(l));
  std::vector<std::vector<NodeId>> buckets;
  for (std::uint64_t p = 0; p < levels[h - 1].size(); ++p) {
    std::vector<NodeId> merged;
    for (NodeId child : {ov.at(h, 2 * p), ov.at(h, 2 * p + 1)}) {
      merged.push_back(child);
      auto& cb = ov.node(child).bucket;
      merged.insert(merged.end(), cb.begin(), cb.end());
      cb.clear();
      ov.node(child).bucket_elements = 0;
    }
    buckets.push_back(std::move(merged));
  }
  ov.set_levels(levels);
  for (std::uint32_t l = 0; l < h; ++l) {
    for (std::uint64_t p = 0; p < levels[l].size(); ++p) ov.place_in_slot(levels[l][p], l, p);
  }
  for (std::uint64_t p = 0; p < levels[h - 1].size(); ++p) {
    NodeId leaf = levels[h - 1][p];
    auto& ln = ov.node(leaf);
    ln.bucket = buckets[p];
    for (NodeId m : ln.bucket) {
      auto& mn = ov.node(m);
      mn.role = Role::kBucketMember;
      mn.level = h - 1;
      mn.pos = p;
      mn.vweight = 0;
      mn.vsize = 0;
    }
    ln.bucket_elements = members_elements(ov, leaf);
  }
  ov.invalidate_order();
  reflow(ov, old, tag);
  finish_structural(ov, tag);
  ++ov.counters().contractions;
}

}  // namespace

Rational node_criticality(const Overlay& ov, NodeId v) {
  const auto& n = ov.node(v);
  if (n.role != Role::kInternal) throw std::invalid_argument("node criticality of a leaf");
  return Rational(ov.node(*n.links.left_child).vsize, n.vsize);
}

bool node_criticality_ok(const Overlay& ov, NodeId v) {
  const auto& n = ov.node(v);
  const std::int64_t left = ov.node(ov.at(n.level + 1, 2 * n.pos)).vsize;
  return 4 * left >= n.vsize && 4 * left <= 3 * n.vsize;
}

std::optional<NodeId> check_and_trigger_nodes(const Overlay& ov, NodeId leaf) {
  std::optional<NodeId> found;
  NodeId a = ov.anchor(leaf);
  while (ov.node(a).level > 0) {
    a = parent_slot(ov, a);
    if (!node_criticality_ok(ov, a)) found = a;
  }
  return found;
}

const char* to_string(StructuralChange s) {
  switch (s) {
    case StructuralChange::kNone: return "none";
    case StructuralChange::kExtended: return "extended";
    case StructuralChange::kContracted: return "contracted";
  }
  return "?";
}

StructuralChange maybe_extend_contract(Overlay& ov, std::uint64_t common_bucket, OpTag tag,
                                       bool forced) {
  const std::uint64_t h = ov.height();
  const std::uint64_t n = ov.live_count();
  const std::uint64_t last = ov.last_structural_count;
  const auto before = op_messages(ov, tag);
  StructuralChange out = StructuralChange::kNone;
  if (forced) {
    if (h == 0) return out;
    contract(ov, tag);
    ++ov.counters().forced_contractions;
    out = StructuralChange::kContracted;
  } else if (common_bucket >= std::max<std::uint64_t>(h + 1, 2) &&
             (last == 0 || n >= 2 * last)) {
    for (NodeId leaf : ov.level(static_cast<std::uint32_t>(h))) {
      if (ov.node(leaf).bucket.size() < 2) {
        ov.log_event({"extension_skipped", tag.seq, leaf, 0, 0, n, "bucket below 2"});
        return out;
      }
    }
    extend(ov, tag);
    out = StructuralChange::kExtended;
  } else if (h >= 1 && common_bucket + 1 <= h && (last == 0 || 2 * n <= last)) {
    contract(ov, tag);
    out = StructuralChange::kContracted;
  }
  if (out != StructuralChange::kNone) {
    ov.log_event({to_string(out), tag.seq, ov.root(), op_messages(ov, tag) - before, 0, n,
                  "H=" + std::to_string(ov.height()) + (forced ? " forced" : "")});
  }
  return out;
}

namespace {

bool subtree_violates(const Overlay& ov, NodeId v) {
  const auto& n = ov.node(v);
  const std::uint32_t h = ov.height();
  for (std::uint32_t l = n.level + 1; l <= h; ++l) {
    const std::uint64_t span = std::uint64_t{1} << (l - n.level);
    for (std::uint64_t p = n.pos * span; p < (n.pos + 1) * span; p += 2) {
      if (brothers_violate(ov, ov.at(l, p), ov.at(l, p + 1))) return true;
    }
  }
  return false;
}

}  // namespace

NodeRedistributionReport redistribute_nodes(Overlay& ov, NodeId v, OpTag tag) {
  NodeRedistributionReport rep;
  rep.root = v;
  auto& net = ov.net();
  const auto before = op_messages(ov, tag);
  const std::vector<NodeId> nodes = ov.subtree_nodes(v);
  const std::vector<NodeId> leaves = ov.subtree_leaves(v);

  // Counting sweep over the subtree and back to v.
  NodeId prev = v;
  for (NodeId x : nodes) {
    if (x != prev) net.hop(prev, x, tag, MsgKind::kCountSweep);
    prev = x;
  }
  if (prev != v) net.hop(prev, v, tag, MsgKind::kCountSweep);

  std::vector<NodeId> members;
  std::vector<std::size_t> old_bucket;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    for (NodeId m : ov.node(leaves[i]).bucket) {
      members.push_back(m);
      old_bucket.push_back(i);
    }
  }
  const std::size_t k = leaves.size(), s = members.size();
  rep.buckets = k;
  rep.members = s;
  std::vector<std::size_t> new_bucket(s);
  {
    std::size_t idx = 0;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t t = s / k + (i < s % k ? 1 : 0);
      for (std::size_t j = 0; j < t; ++j) new_bucket[idx++] = i;
    }
  }

  // Moving members hand their elements to the nearest preceding node that
  // stays, then travel empty, so the key order is untouched.
  std::vector<bool> moving(ov.all_nodes().size(), false);
  for (std::size_t j = 0; j < s; ++j) {
    if (new_bucket[j] != old_bucket[j]) moving[members[j].value] = true;
  }
  std::uint64_t handed = 0;
  NodeId keep = nodes.front();
  for (NodeId x : nodes) {
    if (!moving[x.value]) {
      keep = x;
      continue;
    }
    handed += ov.node(x).store.size();
    hand_off(ov, x, keep, true, tag);
  }
  for (std::size_t i = 1; i < k; ++i) net.hop(leaves[i - 1], leaves[i], tag, MsgKind::kTokenPass);

  for (NodeId leaf : leaves) ov.node(leaf).bucket.clear();
  for (std::size_t j = 0; j < s; ++j) {
    NodeId leaf = leaves[new_bucket[j]];
    if (moving[members[j].value]) {
      net.hop(leaves[old_bucket[j]], members[j], tag, MsgKind::kNodeTransfer);
      ++rep.moved;
    }
    ov.node(leaf).bucket.push_back(members[j]);
    ov.node(members[j]).pos = ov.node(leaf).pos;
  }
  for (NodeId leaf : leaves) ov.node(leaf).bucket_elements = members_elements(ov, leaf);
  {
    auto [lo, hi] = std::minmax_element(leaves.begin(), leaves.end(), [&](NodeId a, NodeId b) {
      return ov.node(a).bucket.size() < ov.node(b).bucket.size();
    });
    if (ov.node(*hi).bucket.size() > ov.node(*lo).bucket.size() + 1) {
      ++ov.counters().bucket_spread_violations;
    }
  }
  ov.invalidate_order();
  if (rep.moved > 0) {
    std::vector<NodeId> ids(leaves);
    ids.insert(ids.end(), members.begin(), members.end());
    ov.sync_links(v, ids, tag);
    ov.sync_member_rows(v, tag);
  }

  recompute_subtree_exact(ov, v, Counter::kWeight);
  recompute_subtree_exact(ov, v, Counter::kSize);
  ++ov.counters().node_redistributions;
  ov.counters().nodes_migrated += rep.moved;
  propagate_from(ov, v, Counter::kWeight, tag);
  propagate_from(ov, v, Counter::kSize, tag);
  // Member counts moved and sizes became exact, so densities inside the
  // subtree changed.
  if (ov.config().balance_elements && ov.node(v).vweight > 0 &&
      (handed > 0 || subtree_violates(ov, v))) {
    redistribute_elements(ov, v, tag);
  }
  rep.messages = op_messages(ov, tag) - before;
  ov.log_event({"redistribute_nodes", tag.seq, v, rep.messages, rep.moved, ov.live_count(),
                "k=" + std::to_string(k) + " s=" + std::to_string(s)});
  if (ov.node(v).level == 0 && ov.node(v).role == Role::kInternal) {
    maybe_extend_contract(ov, s / k, tag);
  } else if (ov.node(v).level == 0) {
    maybe_extend_contract(ov, s, tag);
  }
  return rep;
}

namespace {

// Highest internal node whose node criticality is out of bounds, scanning
// the whole PBT top-down.
std::optional<NodeId> highest_node_violation(const Overlay& ov) {
  for (std::uint32_t l = 0; l < ov.height(); ++l) {
    for (NodeId v : ov.level(l)) {
      if (!node_criticality_ok(ov, v)) return v;
    }
  }
  return std::nullopt;
}

std::optional<NodeId> highest_element_violation(const Overlay& ov) {
  for (std::uint32_t l = 1; l <= ov.height(); ++l) {
    const auto& lv = ov.level(l);
    for (std::size_t p = 0; p + 1 < lv.size(); p += 2) {
      if (brothers_violate(ov, lv[p], lv[p + 1])) return ov.at(l - 1, p / 2);
    }
  }
  return std::nullopt;
}

// Ensures `leaf` has a bucket member by borrowing one, empty, from the
// nearest leaf that has members. Returns the donor leaf (the leaf itself if
// it already had a member), nullopt if no bucket has members. Virtual sizes
// are left to the caller.
std::optional<NodeId> supply(Overlay& ov, NodeId leaf, OpTag tag) {
  if (!ov.node(leaf).bucket.empty()) return leaf;
  const std::uint32_t h = ov.height();
  const std::uint64_t q = ov.node(leaf).pos;
  const std::uint64_t width = ov.level(h).size();
  std::optional<std::uint64_t> src;
  for (std::uint64_t d = 1; d < width && !src; ++d) {
    if (q + d < width && !ov.node(ov.at(h, q + d)).bucket.empty() && ov.is_live(ov.at(h, q + d))) {
      src = q + d;
    } else if (q >= d && !ov.node(ov.at(h, q - d)).bucket.empty() && ov.is_live(ov.at(h, q - d))) {
      src = q - d;
    }
  }
  if (!src) return std::nullopt;
  NodeId w = ov.at(h, *src);
  // Reach w over the level links: one hop per set bit of the distance.
  const std::uint64_t dist = *src > q ? *src - q : q - *src;
  ov.net().bulk(leaf, w, tag, MsgKind::kHealProbe, std::popcount(dist));
  auto& wb = ov.node(w).bucket;
  const bool from_right = *src > q;
  NodeId x = from_right ? wb.front() : wb.back();
  // x leaves w's bucket empty-handed: its elements go to its predecessor.
  const auto& xl = ov.node(x).links;
  NodeId pred = xl.bucket_prev ? *xl.bucket_prev : w;
  hand_off(ov, x, pred, true, tag);
  if (from_right) wb.erase(wb.begin());
  else wb.pop_back();
  ov.net().hop(w, x, tag, MsgKind::kNodeTransfer);
  ov.node(leaf).bucket.push_back(x);
  ov.node(x).pos = q;
  ov.node(w).bucket_elements = members_elements(ov, w);
  ov.node(leaf).bucket_elements = 0;
  ov.invalidate_order();
  std::vector<NodeId> ids = {leaf, w, x};
  for (NodeId m : ov.node(w).bucket) ids.push_back(m);
  ov.sync_links(x, ids, tag);
  ov.sync_member_rows(x, tag);
  ++ov.counters().nodes_migrated;
  return w;
}

struct Replacement {
  NodeId leaf;   // leaf slot whose bucket lost its first member
  NodeId donor;  // leaf that lent a member, if any
};

// Fills the PBT slot of `gone` (departing or dead).
Replacement replace_pbt_node(Overlay& ov, NodeId gone, NodeId reporter, bool failed, OpTag tag) {
  auto& net = ov.net();
  const std::uint32_t h = ov.height();
  const std::uint32_t l = ov.node(gone).level;
  const std::uint64_t p = ov.node(gone).pos;
  const bool leaf_slot = l == h;

  if (leaf_slot && !ov.node(gone).bucket.empty()) {
    // The first bucket member takes over the leaf.
    NodeId z = ov.node(gone).bucket.front();
    if (failed) {
      if (reporter != z) net.hop(reporter, z, tag, MsgKind::kHealProbe);
    } else {
      net.hop(gone, z, tag, MsgKind::kDepartNotice);
      net.bulk(gone, z, tag, MsgKind::kNodeTransfer, tree_link_count(ov.node(gone).links));
      hand_off(ov, gone, z, false, tag);
    }
    std::vector<NodeId> rest(ov.node(gone).bucket.begin() + 1, ov.node(gone).bucket.end());
    const auto vw = ov.node(gone).vweight, vs = ov.node(gone).vsize;
    ov.place_in_slot(z, l, p);
    auto& zn = ov.node(z);
    zn.bucket = rest;
    zn.bucket_elements = members_elements(ov, z);
    zn.vweight = vw;
    zn.vsize = vs;
    ov.node(gone).bucket.clear();
    ov.retire(gone);
    rebuild_routing(ov, z, tag);
    if (failed) query_tree_links(ov, z, tag);
    ov.sync_links(z, neighbourhood_with_bucket(ov, l, p), tag);
    ov.sync_member_rows(z, tag);
    zn.vweight = ov.local_weight(z);
    return {z, NodeId{}};
  }

  // An adjacent leaf u moves into the slot; u's first member z takes u's.
  NodeId u;
  if (leaf_slot) {
    if (h == 0) throw std::invalid_argument("the last node cannot leave");
    u = p + 1 < ov.level(h).size() ? ov.at(h, p + 1) : ov.at(h, p - 1);
    if (failed) net.hop(reporter, u, tag, MsgKind::kHealProbe);
  } else {
    auto s = slot_of_inorder(h, inorder_index(h, l, p) + 1);
    u = ov.at(s.level, s.position);
    if (failed) {
      // Walk down from the right child to the leftmost leaf below it.
      NodeId cur = ov.at(l + 1, 2 * p + 1);
      net.hop(reporter, cur, tag, MsgKind::kHealProbe);
      while (cur != u) {
        NodeId next = ov.at(ov.node(cur).level + 1, 2 * ov.node(cur).pos);
        net.hop(cur, next, tag, MsgKind::kHealProbe);
        cur = next;
      }
    }
  }
  auto donor = supply(ov, u, tag);
  if (!donor) {
    if (failed) throw std::runtime_error("unrecoverable: no bucket member left to fill a slot");
    return {};
  }
  const std::uint64_t q = ov.node(u).pos;
  NodeId z = ov.node(u).bucket.front();
  if (!failed) {
    net.hop(gone, u, tag, MsgKind::kDepartNotice);
    net.bulk(gone, u, tag, MsgKind::kNodeTransfer, tree_link_count(ov.node(gone).links));
  }
  net.hop(u, z, tag, MsgKind::kDepartNotice);
  net.bulk(u, z, tag, MsgKind::kNodeTransfer, tree_link_count(ov.node(u).links));

  // Slot data stays with the slot: z gets u's elements ahead of its own,
  // u gets the leaving node's elements (nothing when it failed).
  hand_off(ov, u, z, false, tag);
  if (!failed) hand_off(ov, gone, u, false, tag);
  const auto gone_vw = ov.node(gone).vweight, gone_vs = ov.node(gone).vsize;
  const auto u_vw = ov.node(u).vweight, u_vs = ov.node(u).vsize;
  std::vector<NodeId> rest(ov.node(u).bucket.begin() + 1, ov.node(u).bucket.end());
  std::vector<NodeId> gone_bucket = ov.node(gone).bucket;
  ov.place_in_slot(u, l, p);
  ov.place_in_slot(z, h, q);
  auto& un = ov.node(u);
  auto& zn = ov.node(z);
  un.bucket = gone_bucket;
  zn.bucket = rest;
  un.bucket_elements = members_elements(ov, u);
  zn.bucket_elements = members_elements(ov, z);
  un.vweight = gone_vw;
  un.vsize = gone_vs;
  zn.vweight = u_vw;
  zn.vsize = u_vs;
  ov.node(gone).bucket.clear();
  ov.retire(gone);
  rebuild_routing(ov, u, tag);
  rebuild_routing(ov, z, tag);
  if (failed) query_tree_links(ov, u, tag);
  auto ids = neighbourhood_with_bucket(ov, l, p);
  auto more = neighbourhood_with_bucket(ov, h, q);
  ids.insert(ids.end(), more.begin(), more.end());
  ov.sync_links(u, ids, tag);
  ov.sync_member_rows(u, tag);
  if (failed) {
    // The dead node's counters are gone; u rebuilds them from its children.
    un.vweight = ov.local_weight(u) + children_sum(ov, u, Counter::kWeight);
    un.vsize = ov.local_size(u) + children_sum(ov, u, Counter::kSize);
    propagate_from(ov, u, Counter::kWeight, tag);
    propagate_from(ov, u, Counter::kSize, tag);
  }
  return {z, *donor == u ? NodeId{} : *donor};
}

void settle_sizes(Overlay& ov, const Replacement& r, OpTag tag) {
  on_local_update(ov, r.leaf, Counter::kSize, tag, -1);
  if (r.donor.valid()) on_local_update(ov, r.donor, Counter::kSize, tag, -1);
}

void after_membership(Overlay& ov, std::vector<NodeId> leaves, OpTag tag) {
  for (NodeId leaf : leaves) {
    if (leaf.valid() && ov.is_live(leaf) && ov.node(leaf).is_pbt()) {
      rebalance_nodes(ov, leaf, tag);
    }
  }
  restore_invariants(ov, tag);
}

}  // namespace

void restore_invariants(Overlay& ov, OpTag tag) {
  // Redistributions change counters inside whole subtrees, so one can expose
  // a violation of the other kind; repeat until both hold everywhere.
  const std::size_t limit = 8 * ov.pbt_count() + 64;
  for (std::size_t i = 0; i < limit; ++i) {
    if (ov.config().balance_nodes) {
      if (auto v = highest_node_violation(ov)) {
        redistribute_nodes(ov, *v, tag);
        continue;
      }
    }
    if (ov.config().balance_elements) {
      if (auto f = highest_element_violation(ov)) {
        redistribute_elements(ov, *f, tag);
        continue;
      }
    }
    return;
  }
  throw std::logic_error("invariant repair did not converge");
}

void rebalance_nodes(Overlay& ov, NodeId leaf, OpTag tag) {
  if (ov.config().balance_nodes && ov.is_live(leaf)) {
    const std::uint32_t h0 = ov.height();
    NodeId from = leaf;
    while (auto v = check_and_trigger_nodes(ov, from)) {
      redistribute_nodes(ov, *v, tag);
      if (ov.height() != h0 || !ov.node(*v).is_pbt()) break;
      from = *v;
    }
  }
  restore_invariants(ov, tag);
}

NodeId join(Overlay& ov, NodeId via, OpTag tag) {
  if (!ov.is_live(via)) throw Unreachable(via, via);
  const auto before = op_messages(ov, tag);
  NodeId z = ov.allocate_node();
  auto& net = ov.net();
  net.hop(z, via, tag, MsgKind::kJoinRequest);
  NodeId u = via;
  const auto& vn = ov.node(via);
  if (vn.role == Role::kBucketMember) {
    u = ov.anchor(via);
  } else if (vn.role == Role::kInternal) {
    u = *vn.links.inorder_next;
  }
  if (u != via) net.hop(via, u, tag, MsgKind::kJoinRequest);
  auto& un = ov.node(u);
  std::vector<NodeId> ids = {u, z};
  if (!un.bucket.empty()) ids.push_back(un.bucket.back());
  un.bucket.push_back(z);
  auto& zn = ov.node(z);
  zn.role = Role::kBucketMember;
  zn.level = ov.height();
  zn.pos = un.pos;
  ov.invalidate_order();
  ov.sync_links(u, ids, tag);
  ov.sync_member_rows(u, tag);
  on_local_update(ov, u, Counter::kSize, tag, 1);
  const auto own = op_messages(ov, tag) - before;
  after_membership(ov, {u}, tag);
  ov.log_event({"join", tag.seq, z, op_messages(ov, tag) - before, 0, ov.live_count(),
                "base=" + std::to_string(own)});
  return z;
}

void depart(Overlay& ov, NodeId v, OpTag tag) {
  if (!ov.is_live(v)) throw std::invalid_argument("depart of a node that is not live");
  if (ov.live_count() <= 1) throw std::invalid_argument("the last node cannot leave");
  const auto before = op_messages(ov, tag);
  auto& net = ov.net();
  NodeId shrunk, donor;
  for (int attempt = 0; attempt < 4 && !shrunk.valid(); ++attempt) {
    const auto& n = ov.node(v);
    if (n.role == Role::kBucketMember) {
      NodeId u = ov.anchor(v);
      NodeId prev = n.links.bucket_prev ? *n.links.bucket_prev : u;
      OptNode next = n.links.bucket_next;
      net.hop(v, prev, tag, MsgKind::kDepartNotice);
      if (next) net.hop(v, *next, tag, MsgKind::kDepartNotice);
      hand_off(ov, v, prev, true, tag);
      auto& b = ov.node(u).bucket;
      b.erase(std::find(b.begin(), b.end(), v));
      ov.invalidate_order();
      std::vector<NodeId> ids = {prev, u};
      if (next) ids.push_back(*next);
      ov.sync_links(v, ids, tag);
      ov.sync_member_rows(v, tag);
      ov.retire(v);
      on_local_update(ov, u, Counter::kSize, tag, -1);
      shrunk = u;
      break;
    }
    Replacement r = replace_pbt_node(ov, v, v, false, tag);
    if (r.leaf.valid()) {
      settle_sizes(ov, r, tag);
      shrunk = r.leaf;
      donor = r.donor;
      break;
    }
    // No bucket anywhere has a member: drop a level and try again.
    maybe_extend_contract(ov, 0, tag, true);
  }
  if (!shrunk.valid()) throw std::logic_error("departure could not be completed");
  after_membership(ov, {shrunk, donor}, tag);
  ov.log_event({"depart", tag.seq, v, op_messages(ov, tag) - before, 0, ov.live_count(), ""});
}

std::vector<Key> heal_failure(Overlay& ov, NodeId reporter, NodeId dead, OpTag tag) {
  if (!ov.net().is_failed(dead)) throw std::logic_error("heal of a node that has not failed");
  if (!ov.node(dead).live) return {};
  if (!ov.is_live(reporter)) throw std::logic_error("heal reported by a node that is not live");
  const auto before = op_messages(ov, tag);
  std::vector<Key> lost = ov.node(dead).store;
  ov.store_assign(dead, {});
  ov.counters().elements_lost += lost.size();
  ++ov.counters().heals;
  NodeId shrunk, donor;
  const auto& n = ov.node(dead);
  if (n.role == Role::kBucketMember) {
    NodeId u = ov.anchor(dead);
    if (reporter != u) ov.net().hop(reporter, u, tag, MsgKind::kHealProbe);
    std::vector<NodeId> ids = {u};
    if (n.links.bucket_prev) ids.push_back(*n.links.bucket_prev);
    if (n.links.bucket_next) ids.push_back(*n.links.bucket_next);
    auto& b = ov.node(u).bucket;
    b.erase(std::find(b.begin(), b.end(), dead));
    ov.invalidate_order();
    ov.retire(dead);
    ov.sync_links(u, ids, tag);
    ov.sync_member_rows(u, tag);
    shrunk = u;
    on_local_update(ov, u, Counter::kSize, tag, -1);
  } else {
    Replacement r = replace_pbt_node(ov, dead, reporter, true, tag);
    settle_sizes(ov, r, tag);
    shrunk = r.leaf;
    donor = r.donor;
  }
  if (!lost.empty()) {
    on_local_update(ov, shrunk, Counter::kWeight, tag, -static_cast<std::int64_t>(lost.size()));
  }
  after_membership(ov, {shrunk, donor}, tag);
  ov.log_event({"heal", tag.seq, dead, op_messages(ov, tag) - before, lost.size(),
                ov.live_count(), ""});
  return lost;
}

std::vector<std::string> validate_membership(const Overlay& ov) {
  std::vector<std::string> out;
  for (std::uint32_t l = 0; l < ov.height(); ++l) {
    for (NodeId v : ov.level(l)) {
      if (!node_criticality_ok(ov, v)) {
        const auto nc = node_criticality(ov, v);
        out.push_back("node " + std::to_string(v.value) + " node criticality " +
                      std::to_string(nc.num) + "/" + std::to_string(nc.den));
      }
    }
  }
  return out;
}

}  // namespace d2
