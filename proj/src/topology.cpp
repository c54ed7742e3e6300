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

#include <algorithm>
#include <bit>
#include <sstream>
#include <stdexcept>

#include "d2tree/overlay.hpp"

namespace d2 {

namespace {

constexpr std::size_t kNoRank = static_cast<std::size_t>(-1);

std::size_t diff_opt(const OptNode& a, const OptNode& b) { return a == b ? 0 : 1; }

std::size_t diff_vec(const std::vector<OptNode>& a, const std::vector<OptNode>& b) {
  std::size_t n = std::max(a.size(), b.size());
  std::size_t d = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= a.size()) d += b[i].has_value();
    else if (i >= b.size()) d += a[i].has_value();
    else d += diff_opt(a[i], b[i]);
  }
  return d;
}

std::size_t count_vec(const std::vector<OptNode>& v) {
  return static_cast<std::size_t>(
      std::count_if(v.begin(), v.end(), [](const OptNode& o) { return o.has_value(); }));
}

std::string fmt(const OptNode& n) {
  return n ? std::to_string(n->value) : std::string("-");
}

std::string fmt(const std::vector<OptNode>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += fmt(v[i]);
  }
  return s + "]";
}

}  // namespace

const char* to_string(Role role) {
  switch (role) {
    case Role::kInternal: return "internal";
    case Role::kLeaf: return "leaf";
    case Role::kBucketMember: return "member";
  }
  return "?";
}

std::size_t Links::diff(const Links& o) const {
  std::size_t d = diff_opt(parent, o.parent) + diff_opt(left_child, o.left_child) +
                  diff_opt(right_child, o.right_child) +
                  diff_opt(inorder_prev, o.inorder_prev) +
                  diff_opt(inorder_next, o.inorder_next) +
                  diff_vec(routing_left, o.routing_left) +
                  diff_vec(routing_right, o.routing_right) +
                  diff_opt(bucket_rep, o.bucket_rep) +
                  diff_opt(bucket_prev, o.bucket_prev) +
                  diff_opt(bucket_next, o.bucket_next) +
                  diff_opt(bucket_head, o.bucket_head) +
                  diff_opt(bucket_tail, o.bucket_tail);
  if (hyper.has_value() != o.hyper.has_value()) {
    d += 5;
  } else if (hyper) {
    d += diff_opt(hyper->far_left, o.hyper->far_left) +
         diff_opt(hyper->far_right, o.hyper->far_right) +
         diff_opt(hyper->rank_prev, o.hyper->rank_prev) +
         diff_opt(hyper->rank_next, o.hyper->rank_next) +
         (hyper->max_rank == o.hyper->max_rank && hyper->rank == o.hyper->rank ? 0 : 1);
  }
  return d;
}

std::size_t Links::count() const {
  std::size_t c = 0;
  for (const OptNode* o : {&parent, &left_child, &right_child, &inorder_prev,
                           &inorder_next, &bucket_rep, &bucket_prev, &bucket_next,
                           &bucket_head, &bucket_tail}) {
    c += o->has_value() ? 1 : 0;
  }
  c += count_vec(routing_left) + count_vec(routing_right);
  if (hyper) {
    c += (hyper->far_left ? 1 : 0) + (hyper->far_right ? 1 : 0) +
         (hyper->rank_prev ? 1 : 0) + (hyper->rank_next ? 1 : 0) + 1;
  }
  return c;
}

KeyRange OverlayNode::range() const {
  if (store.empty()) return {};
  return {store.front(), store.back()};
}

std::uint64_t inorder_index(std::uint32_t h, std::uint32_t l, std::uint64_t pos) {
  return ((2 * pos + 1) << (h - l)) - 1;
}

LevelPosition slot_of_inorder(std::uint32_t h, std::uint64_t index) {
  std::uint64_t x = index + 1;
  auto t = static_cast<std::uint32_t>(std::countr_zero(x));
  return {h - t, ((x >> t) - 1) / 2};
}

Overlay::Overlay(Config config) : config_(config), net_(config.seed) {
  config_.validate();
}

Overlay Overlay::build_initial(std::uint32_t num_pbt_levels,
                               std::uint32_t bucket_size, Config config) {
  if (num_pbt_levels < 1) throw std::invalid_argument("num_pbt_levels must be >= 1");
  if (bucket_size < 1) throw std::invalid_argument("bucket_size must be >= 1");
  if (num_pbt_levels > 24) throw std::invalid_argument("num_pbt_levels too large");
  Overlay ov(config);
  const std::uint32_t h = num_pbt_levels - 1;
  ov.levels_.resize(num_pbt_levels);
  for (std::uint32_t l = 0; l <= h; ++l) {
    for (std::uint64_t p = 0; p < (std::uint64_t{1} << l); ++p) {
      NodeId id = ov.allocate_node();
      ov.levels_[l].push_back(id);
      auto& n = ov.node(id);
      n.role = l == h ? Role::kLeaf : Role::kInternal;
      n.level = l;
      n.pos = p;
    }
  }
  for (NodeId leaf : ov.levels_[h]) {
    for (std::uint32_t i = 0; i < bucket_size; ++i) {
      NodeId id = ov.allocate_node();
      auto& m = ov.node(id);
      m.role = Role::kBucketMember;
      m.level = h;
      m.pos = ov.node(leaf).pos;
      ov.node(leaf).bucket.push_back(id);
    }
  }
  ov.rebuild_all_links();
  for (std::uint32_t l = h + 1; l-- > 0;) {
    for (NodeId id : ov.levels_[l]) {
      auto& n = ov.node(id);
      n.vweight = ov.local_weight(id);
      n.vsize = ov.local_size(id);
      if (l < h) {
        n.vweight += ov.node(*n.links.left_child).vweight + ov.node(*n.links.right_child).vweight;
        n.vsize += ov.node(*n.links.left_child).vsize + ov.node(*n.links.right_child).vsize;
      }
    }
  }
  return ov;
}

bool Overlay::is_live(NodeId id) const {
  return id.valid() && id.value < nodes_.size() && nodes_[id.value].live &&
         !net_.is_failed(id);
}

NodeId Overlay::anchor(NodeId id) const {
  const auto& n = node(id);
  if (n.role != Role::kBucketMember) return id;
  return at(height(), n.pos);
}

std::optional<NodeId> Overlay::inorder_adjacent(NodeId v, Side side) const {
  const auto& n = node(v);
  if (!n.is_pbt()) throw std::invalid_argument("inorder_adjacent on a bucket member");
  return side == Side::kLeft ? n.links.inorder_prev : n.links.inorder_next;
}

void Overlay::rebuild_order() const {
  order_.clear();
  nonempty_ranks_.clear();
  rank_.assign(nodes_.size(), kNoRank);
  const std::uint32_t h = height();
  const std::uint64_t total = (std::uint64_t{2} << h) - 1;
  for (std::uint64_t j = 0; j < total; ++j) {
    LevelPosition lp = slot_of_inorder(h, j);
    NodeId id = levels_[lp.level][lp.position];
    order_.push_back(id);
    if (lp.level == h) {
      for (NodeId m : node(id).bucket) order_.push_back(m);
    }
  }
  for (std::size_t r = 0; r < order_.size(); ++r) {
    rank_[order_[r].value] = r;
    if (!node(order_[r]).store.empty()) nonempty_ranks_.insert(r);
  }
  order_dirty_ = false;
}

const std::vector<NodeId>& Overlay::expanded_order() const {
  if (order_dirty_) rebuild_order();
  return order_;
}

std::size_t Overlay::rank_of(NodeId id) const {
  if (order_dirty_) rebuild_order();
  std::size_t r = id.value < rank_.size() ? rank_[id.value] : kNoRank;
  if (r == kNoRank) throw std::invalid_argument("node not in overlay order");
  return r;
}

std::pair<std::size_t, std::size_t> Overlay::subtree_span(NodeId v) const {
  const auto& n = node(v);
  if (!n.is_pbt()) throw std::invalid_argument("subtree_span of a bucket member");
  const std::uint32_t h = height();
  const std::uint32_t shift = h - n.level;
  NodeId first_leaf = at(h, n.pos << shift);
  NodeId last_leaf = at(h, ((n.pos + 1) << shift) - 1);
  return {rank_of(first_leaf), rank_of(last_leaf) + node(last_leaf).bucket.size()};
}

std::vector<NodeId> Overlay::subtree_nodes(NodeId v) const {
  auto [a, b] = subtree_span(v);
  const auto& order = expanded_order();
  return {order.begin() + static_cast<std::ptrdiff_t>(a),
          order.begin() + static_cast<std::ptrdiff_t>(b) + 1};
}

std::vector<NodeId> Overlay::subtree_leaves(NodeId v) const {
  const auto& n = node(v);
  const std::uint32_t shift = height() - n.level;
  std::vector<NodeId> out;
  for (std::uint64_t p = n.pos << shift; p < ((n.pos + 1) << shift); ++p) {
    out.push_back(at(height(), p));
  }
  return out;
}

std::uint32_t Overlay::hypernode_group_size(std::uint32_t l) const {
  return std::max<std::uint32_t>(l, 1);
}

std::pair<std::vector<OptNode>, std::vector<OptNode>> Overlay::expected_routing(
    std::uint32_t l, std::uint64_t pos) const {
  std::vector<OptNode> left(l), right(l);
  const std::uint64_t width = std::uint64_t{1} << l;
  for (std::uint32_t i = 0; i < l; ++i) {
    const std::uint64_t d = std::uint64_t{1} << i;
    if (pos >= d) left[i] = at(l, pos - d);
    if (pos + d < width) right[i] = at(l, pos + d);
  }
  return {left, right};
}

namespace {

// Hypernode slot for position `pos` of a row of `width` slots grouped by g.
// `at` maps a row position to the node there, if any.
template <class At>
HypernodeSlot hyper_slot(std::uint64_t width, std::uint64_t g, std::uint64_t pos, At at,
                         NodeId self) {
  const std::uint64_t group = pos / g;
  const std::uint64_t start = group * g;
  const std::uint64_t end = std::min(start + g, width);
  HypernodeSlot s;
  s.rank = static_cast<std::uint32_t>(pos - start + 1);
  s.max_rank = self;
  for (std::uint64_t t = end; t > start; --t) {
    if (OptNode m = at(t - 1)) {
      s.max_rank = *m;
      break;
    }
  }
  if (pos > 0) s.rank_prev = at(pos - 1);
  if (pos + 1 < width) s.rank_next = at(pos + 1);
  // Rank r links ~2^r away: exact inside the hypernode, otherwise to the
  // rank-r member (clamped to the last member) of the hypernode holding
  // the node 2^r away.
  auto resolve = [&](std::uint64_t t) -> OptNode {
    const std::uint64_t tg = t / g;
    if (tg == group) return at(t);
    const std::uint64_t last = std::min(tg * g + g, width) - 1;
    return at(std::min(tg * g + s.rank - 1, last));
  };
  if (s.rank < 63) {
    const std::uint64_t d = std::uint64_t{1} << s.rank;
    if (pos + d < width) s.far_right = resolve(pos + d);
    if (pos >= d) s.far_left = resolve(pos - d);
  }
  return s;
}

}  // namespace

HypernodeSlot Overlay::expected_hyper(std::uint32_t l, std::uint64_t pos) const {
  return hyper_slot(std::uint64_t{1} << l, hypernode_group_size(l), pos,
                    [&](std::uint64_t t) -> OptNode { return at(l, t); }, at(l, pos));
}

OptNode Overlay::row_member(std::uint64_t bucket_pos, std::size_t j) const {
  const auto& b = node(at(height(), bucket_pos)).bucket;
  if (b.empty()) return std::nullopt;
  return b[std::min(j, b.size() - 1)];
}

std::size_t Overlay::bucket_index(NodeId member) const {
  const auto& b = node(at(height(), node(member).pos)).bucket;
  auto it = std::find(b.begin(), b.end(), member);
  if (it == b.end()) throw std::logic_error("bucket member missing from its bucket");
  return static_cast<std::size_t>(it - b.begin());
}

std::uint64_t Overlay::sync_member_rows(NodeId initiator, OpTag tag) {
  std::vector<NodeId> ids;
  for (NodeId leaf : levels_[height()]) {
    const auto& b = node(leaf).bucket;
    ids.insert(ids.end(), b.begin(), b.end());
  }
  return sync_links(initiator, ids, tag);
}

Links Overlay::expected_links(NodeId id) const {
  const auto& n = node(id);
  Links L;
  const std::uint32_t h = height();
  if (n.is_pbt()) {
    const std::uint32_t l = n.level;
    const std::uint64_t p = n.pos;
    if (l > 0) L.parent = at(l - 1, p / 2);
    if (l < h) {
      L.left_child = at(l + 1, 2 * p);
      L.right_child = at(l + 1, 2 * p + 1);
    }
    const std::uint64_t idx = inorder_index(h, l, p);
    const std::uint64_t total = (std::uint64_t{2} << h) - 1;
    if (idx > 0) {
      auto s = slot_of_inorder(h, idx - 1);
      L.inorder_prev = at(s.level, s.position);
    }
    if (idx + 1 < total) {
      auto s = slot_of_inorder(h, idx + 1);
      L.inorder_next = at(s.level, s.position);
    }
    if (config_.mode == RoutingMode::kTable) {
      std::tie(L.routing_left, L.routing_right) = expected_routing(l, p);
    } else {
      L.hyper = expected_hyper(l, p);
    }
    if (n.role == Role::kLeaf && !n.bucket.empty()) {
      L.bucket_head = n.bucket.front();
      L.bucket_tail = n.bucket.back();
    }
  } else {
    NodeId rep = at(h, n.pos);
    L.bucket_rep = rep;
    const auto& b = node(rep).bucket;
    auto it = std::find(b.begin(), b.end(), id);
    if (it == b.end()) throw std::logic_error("bucket member missing from its bucket");
    if (it != b.begin()) L.bucket_prev = *(it - 1);
    if (it + 1 != b.end()) L.bucket_next = *(it + 1);
    const auto j = static_cast<std::size_t>(it - b.begin());
    const std::uint64_t width = std::uint64_t{1} << h;
    auto row = [&](std::uint64_t t) { return row_member(t, j); };
    if (config_.mode == RoutingMode::kTable) {
      L.routing_left.resize(h);
      L.routing_right.resize(h);
      for (std::uint32_t i = 0; i < h; ++i) {
        const std::uint64_t d = std::uint64_t{1} << i;
        if (n.pos >= d) L.routing_left[i] = row(n.pos - d);
        if (n.pos + d < width) L.routing_right[i] = row(n.pos + d);
      }
    } else {
      L.hyper = hyper_slot(width, hypernode_group_size(h), n.pos, row, id);
    }
  }
  return L;
}

std::uint64_t Overlay::sync_links(NodeId initiator, const std::vector<NodeId>& ids,
                                  OpTag tag) {
  std::vector<NodeId> sorted(ids);
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::uint64_t msgs = 0;
  for (NodeId id : sorted) {
    if (!id.valid() || !node(id).live || net_.is_failed(id)) continue;
    Links want = expected_links(id);
    std::size_t d = node(id).links.diff(want);
    if (d == 0) continue;
    if (id != initiator) {
      net_.bulk(initiator, id, tag, MsgKind::kLinkUpdate, d);
      msgs += d;
    }
    node(id).links = std::move(want);
  }
  return msgs;
}

std::vector<NodeId> Overlay::slot_neighbourhood(std::uint32_t l, std::uint64_t pos) const {
  std::vector<NodeId> out(levels_.at(l).begin(), levels_.at(l).end());
  const std::uint32_t h = height();
  if (l > 0) out.push_back(at(l - 1, pos / 2));
  if (l < h) {
    out.push_back(at(l + 1, 2 * pos));
    out.push_back(at(l + 1, 2 * pos + 1));
  }
  const std::uint64_t idx = inorder_index(h, l, pos);
  const std::uint64_t total = (std::uint64_t{2} << h) - 1;
  if (idx > 0) {
    auto s = slot_of_inorder(h, idx - 1);
    out.push_back(at(s.level, s.position));
  }
  if (idx + 1 < total) {
    auto s = slot_of_inorder(h, idx + 1);
    out.push_back(at(s.level, s.position));
  }
  if (l == h) {
    const auto& b = node(at(l, pos)).bucket;
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

void Overlay::rebuild_all_links() {
  for (auto& n : nodes_) {
    if (n.live) n.links = expected_links(n.id);
  }
  order_dirty_ = true;
}

std::optional<std::uint64_t> Overlay::build_routing_from_sibling(NodeId v, OpTag tag) {
  auto& n = node(v);
  if (!n.is_pbt()) throw std::invalid_argument("routing tables live on PBT nodes");
  const std::uint32_t l = n.level;
  const std::uint64_t p = n.pos;
  const std::uint64_t width = std::uint64_t{1} << l;
  if (l == 0) {
    n.links.routing_left.clear();
    n.links.routing_right.clear();
    return 0;
  }
  const bool use_left = p > 0 && is_live(at(l, p - 1));
  const bool use_right = !use_left && p + 1 < width && is_live(at(l, p + 1));
  if (!use_left && !use_right) return std::nullopt;
  const NodeId sib = use_left ? at(l, p - 1) : at(l, p + 1);
  const Links& s = node(sib).links;
  std::uint64_t msgs = 0;
  auto copy_entry = [&] {
    net_.hop(sib, v, tag, MsgKind::kTableCopy);
    ++msgs;
  };
  // Ask t for its level neighbour on `side`.
  auto neighbour_of = [&](NodeId t, Side side) -> OptNode {
    net_.hop(v, t, tag, MsgKind::kHealProbe);
    net_.hop(t, v, tag, MsgKind::kReply);
    msgs += 2;
    const auto& tl = node(t).links;
    const auto& tab = side == Side::kLeft ? tl.routing_left : tl.routing_right;
    return tab.empty() ? OptNode{} : tab[0];
  };
  auto ask = [&](NodeId t, Side side, std::uint32_t i) -> OptNode {
    net_.hop(v, t, tag, MsgKind::kHealProbe);
    net_.hop(t, v, tag, MsgKind::kReply);
    msgs += 2;
    const auto& tl = node(t).links;
    const auto& tab = side == Side::kLeft ? tl.routing_left : tl.routing_right;
    return i < tab.size() ? tab[i] : OptNode{};
  };
  std::vector<OptNode> left(l), right(l);
  // With the left sibling s = p-1, every target of v is the right neighbour
  // of the corresponding target of s; symmetric for the right sibling.
  const Side shift = use_left ? Side::kRight : Side::kLeft;
  for (std::uint32_t i = 0; i < l; ++i) {
    const std::uint64_t d = std::uint64_t{1} << i;
    for (Side side : {Side::kLeft, Side::kRight}) {
      auto& out = side == Side::kLeft ? left : right;
      const bool exists = side == Side::kLeft ? p >= d : p + d < width;
      if (!exists) continue;
      const bool facing = side == shift;
      const auto& stab = side == Side::kLeft ? s.routing_left : s.routing_right;
      if (i == 0 && !facing) {
        out[i] = sib;
      } else if (i == 0) {
        // The sibling's distance-1 entry is v's own slot; its distance-2
        // entry is exactly v's distance-1 target.
        copy_entry();
        out[i] = stab.size() > 1 ? stab[1] : OptNode{};
      } else if (i < stab.size() && stab[i]) {
        copy_entry();
        out[i] = neighbour_of(*stab[i], shift);
      } else if (out[i - 1]) {
        out[i] = ask(*out[i - 1], side, i - 1);
      }
    }
  }
  n.links.routing_left = std::move(left);
  n.links.routing_right = std::move(right);
  return msgs;
}

void Overlay::hypernode_group_level(std::uint32_t l) {
  if (config_.mode != RoutingMode::kHypernode) return;
  for (std::uint64_t p = 0; p < levels_.at(l).size(); ++p) {
    node(at(l, p)).links.hyper = expected_hyper(l, p);
  }
}

std::uint64_t Overlay::hypernode_reconstruct_links(NodeId v, OpTag tag) {
  auto& n = node(v);
  if (!n.is_pbt()) throw std::invalid_argument("hypernode slots live on PBT nodes");
  const std::uint32_t l = n.level;
  const std::uint64_t p = n.pos;
  const std::uint64_t width = std::uint64_t{1} << l;
  HypernodeSlot want = expected_hyper(l, p);
  std::uint64_t msgs = 0;
  auto query = [&](NodeId t) {
    net_.hop(v, t, tag, MsgKind::kHealProbe);
    net_.hop(t, v, tag, MsgKind::kReply);
    msgs += 2;
  };
  NodeId sib = kNoNode;
  if (p > 0 && is_live(at(l, p - 1))) sib = at(l, p - 1);
  else if (p + 1 < width && is_live(at(l, p + 1))) sib = at(l, p + 1);
  if (!sib.valid()) {
    // Both level neighbours are gone: find a sibling through the parents.
    if (l == 0) {
      n.links.hyper = want;
      return 0;
    }
    NodeId par = at(l - 1, p / 2);
    if (!is_live(par)) throw std::runtime_error("hypernode reconstruction: no live route");
    query(par);
    for (OptNode o : {want.rank_prev, want.rank_next}) {
      if (o && is_live(*o)) {
        sib = *o;
        break;
      }
    }
    if (!sib.valid()) {
      n.links.hyper = want;
      return msgs;
    }
    query(sib);
  }
  // Rank and group bounds follow from the sibling's slot; each link target
  // is one hop away from a target the sibling already holds.
  net_.hop(sib, v, tag, MsgKind::kTableCopy);
  ++msgs;
  for (OptNode o : {want.far_left, want.far_right, want.rank_prev, want.rank_next}) {
    if (o && *o != sib && is_live(*o)) query(*o);
  }
  if (want.max_rank != v && want.max_rank != sib && is_live(want.max_rank)) {
    query(want.max_rank);
  }
  n.links.hyper = want;
  return msgs;
}

std::vector<std::string> Overlay::validate_topology() const {
  std::vector<std::string> out;
  const std::uint32_t h = height();
  auto bad = [&](std::string s) { out.push_back(std::move(s)); };
  for (std::uint32_t l = 0; l <= h; ++l) {
    if (levels_[l].size() != (std::uint64_t{1} << l)) {
      bad("level " + std::to_string(l) + " has " + std::to_string(levels_[l].size()) +
          " slots");
      continue;
    }
    for (std::uint64_t p = 0; p < levels_[l].size(); ++p) {
      const auto& n = node(levels_[l][p]);
      const std::string tag = "node " + std::to_string(n.id.value);
      if (!n.live) bad(tag + " in PBT but retired");
      if (n.level != l || n.pos != p) bad(tag + " level/position mismatch");
      Role want = l == h ? Role::kLeaf : Role::kInternal;
      if (n.role != want) bad(tag + " role " + to_string(n.role));
      if (l < h && !n.bucket.empty()) bad(tag + " internal node owns a bucket");
    }
  }
  std::vector<int> seen(nodes_.size(), 0);
  for (NodeId leaf : levels_[h]) {
    for (NodeId m : node(leaf).bucket) {
      if (++seen[m.value] > 1) bad("node " + std::to_string(m.value) + " in two buckets");
      const auto& mn = node(m);
      if (!mn.live || mn.role != Role::kBucketMember || mn.pos != node(leaf).pos) {
        bad("node " + std::to_string(m.value) + " bad bucket membership");
      }
    }
    // Walk the stored list and compare with the bucket.
    std::vector<NodeId> walked;
    OptNode cur = node(leaf).links.bucket_head;
    while (cur && walked.size() <= node(leaf).bucket.size()) {
      walked.push_back(*cur);
      cur = node(*cur).links.bucket_next;
    }
    if (walked != node(leaf).bucket) {
      bad("bucket list of leaf " + std::to_string(leaf.value) + " is broken");
    }
  }
  for (const auto& n : nodes_) {
    if (!n.live) continue;
    if (!n.is_pbt() && seen[n.id.value] == 0) {
      bad("node " + std::to_string(n.id.value) + " is in no bucket");
      continue;
    }
    Links want = expected_links(n.id);
    const Links& got = n.links;
    const std::string tag = "node " + std::to_string(n.id.value) + " ";
    auto chk = [&](const char* field, const OptNode& a, const OptNode& b) {
      if (a != b) bad(tag + field + ": stored " + fmt(a) + " expected " + fmt(b));
    };
    chk("parent", got.parent, want.parent);
    chk("left_child", got.left_child, want.left_child);
    chk("right_child", got.right_child, want.right_child);
    chk("inorder_prev", got.inorder_prev, want.inorder_prev);
    chk("inorder_next", got.inorder_next, want.inorder_next);
    chk("bucket_rep", got.bucket_rep, want.bucket_rep);
    chk("bucket_prev", got.bucket_prev, want.bucket_prev);
    chk("bucket_next", got.bucket_next, want.bucket_next);
    chk("bucket_head", got.bucket_head, want.bucket_head);
    chk("bucket_tail", got.bucket_tail, want.bucket_tail);
    if (got.routing_left != want.routing_left) bad(tag + "routing_left: stored " + fmt(got.routing_left) + " expected " + fmt(want.routing_left));
    if (got.routing_right != want.routing_right) bad(tag + "routing_right: stored " + fmt(got.routing_right) + " expected " + fmt(want.routing_right));
    if (got.hyper != want.hyper) bad(tag + "hypernode slot differs");
    if (config_.mode == RoutingMode::kHypernode && got.count() > 12) {
      bad(tag + "holds " + std::to_string(got.count()) + " links");
    }
    if (!std::is_sorted(n.store.begin(), n.store.end())) bad(tag + "store unsorted");
  }
  return out;
}

std::string Overlay::dump() const {
  std::ostringstream os;
  os << "# d2tree height=" << height() << " nodes=" << live_count_
     << " mode=" << to_string(config_.mode) << "\n";
  for (const auto& n : nodes_) {
    if (!n.live) continue;
    const Links& L = n.links;
    os << n.id.value << ' ' << to_string(n.role) << ' ' << n.level << '/' << n.pos
       << " p=" << fmt(L.parent) << " c=" << fmt(L.left_child) << ',' << fmt(L.right_child)
       << " io=" << fmt(L.inorder_prev) << ',' << fmt(L.inorder_next);
    {
      if (L.hyper) {
        const auto& s = *L.hyper;
        os << " hyper=" << s.rank << ':' << fmt(s.far_left) << ',' << fmt(s.far_right)
           << ',' << fmt(s.rank_prev) << ',' << fmt(s.rank_next) << ',' << s.max_rank.value;
      } else {
        os << " rl=" << fmt(L.routing_left) << " rr=" << fmt(L.routing_right);
      }
    }
    if (n.role == Role::kLeaf) os << " b=" << fmt(L.bucket_head) << ',' << fmt(L.bucket_tail);
    if (n.role == Role::kBucketMember) {
      os << " rep=" << fmt(L.bucket_rep) << " bl=" << fmt(L.bucket_prev) << ','
         << fmt(L.bucket_next);
    }
    os << " e=" << n.store.size();
    if (n.is_pbt()) os << " bw=" << n.vweight << " bs=" << n.vsize;
    os << '\n';
  }
  return os.str();
}

void Overlay::note_store_change(NodeId id, bool was_empty) {
  if (order_dirty_) return;
  const bool now_empty = node(id).store.empty();
  if (was_empty == now_empty) return;
  std::size_t r = rank_[id.value];
  if (now_empty) nonempty_ranks_.erase(r);
  else nonempty_ranks_.insert(r);
}

void Overlay::store_insert(NodeId id, Key k) {
  auto& s = node(id).store;
  const bool was_empty = s.empty();
  s.insert(std::upper_bound(s.begin(), s.end(), k), k);
  if (node(id).role == Role::kBucketMember) ++node(anchor(id)).bucket_elements;
  ++total_elements_;
  note_store_change(id, was_empty);
}

bool Overlay::store_erase(NodeId id, Key k) {
  auto& s = node(id).store;
  auto it = std::lower_bound(s.begin(), s.end(), k);
  if (it == s.end() || *it != k) return false;
  s.erase(it);
  if (node(id).role == Role::kBucketMember) --node(anchor(id)).bucket_elements;
  --total_elements_;
  note_store_change(id, false);
  return true;
}

void Overlay::store_assign(NodeId id, std::vector<Key> keys) {
  auto& n = node(id);
  const bool was_empty = n.store.empty();
  const auto before = static_cast<std::int64_t>(n.store.size());
  const auto after = static_cast<std::int64_t>(keys.size());
  n.store = std::move(keys);
  if (n.role == Role::kBucketMember) node(anchor(id)).bucket_elements += after - before;
  total_elements_ += after - before;
  note_store_change(id, was_empty);
}

std::int64_t Overlay::local_weight(NodeId v) const {
  const auto& n = node(v);
  auto own = static_cast<std::int64_t>(n.store.size());
  return n.role == Role::kLeaf ? own + n.bucket_elements : own;
}

std::int64_t Overlay::local_size(NodeId v) const {
  const auto& n = node(v);
  return n.role == Role::kLeaf ? 1 + static_cast<std::int64_t>(n.bucket.size()) : 1;
}

Direction Overlay::classify(NodeId x, Key alpha) const {
  if (order_dirty_) rebuild_order();
  const std::size_t r = rank_of(x);
  if (nonempty_ranks_.empty()) {
    // Empty overlay: the leftmost bucket member (or the lone leftmost leaf)
    // owns every key.
    const std::size_t seed = node(order_[0]).bucket.empty() ? 0 : 1;
    if (r == seed) return Direction::kHere;
    return r < seed ? Direction::kRight : Direction::kLeft;
  }
  auto next_it = nonempty_ranks_.upper_bound(r);
  auto lb = nonempty_ranks_.lower_bound(r);
  std::optional<std::size_t> prev_r, next_r;
  if (lb != nonempty_ranks_.begin()) prev_r = *std::prev(lb);
  if (next_it != nonempty_ranks_.end()) next_r = *next_it;
  auto min_at = [&](std::size_t rr) { return node(order_[rr]).store.front(); };
  auto max_at = [&](std::size_t rr) { return node(order_[rr]).store.back(); };
  const auto& s = node(x).store;
  if (!s.empty()) {
    const Key mn = s.front();
    const Key mx = s.back();
    if (prev_r && (alpha < mn || (alpha == mn && max_at(*prev_r) == mn))) {
      return Direction::kLeft;
    }
    if (next_r) {
      const Key nm = min_at(*next_r);
      if (alpha > nm || (alpha == nm && mx < nm)) return Direction::kRight;
    }
    return Direction::kHere;
  }
  if (!next_r) return Direction::kLeft;
  if (!prev_r) return Direction::kRight;
  const Key nm = min_at(*next_r);
  if (alpha < nm || (alpha == nm && max_at(*prev_r) == nm)) return Direction::kLeft;
  return Direction::kRight;
}

Direction Overlay::classify_bucket(NodeId leaf, Key alpha) const {
  Direction first = classify(leaf, alpha);
  if (first != Direction::kRight) return first;
  const auto& b = node(leaf).bucket;
  if (b.empty()) return Direction::kRight;
  return classify(b.back(), alpha) == Direction::kRight ? Direction::kRight
                                                        : Direction::kHere;
}

NodeId Overlay::allocate_node() {
  NodeId id = net_.add_node();
  OverlayNode n;
  n.id = id;
  nodes_.push_back(std::move(n));
  ++live_count_;
  order_dirty_ = true;
  return id;
}

void Overlay::place_in_slot(NodeId occupant, std::uint32_t l, std::uint64_t pos) {
  levels_.at(l).at(pos) = occupant;
  auto& n = node(occupant);
  n.role = l == height() ? Role::kLeaf : Role::kInternal;
  n.level = l;
  n.pos = pos;
  n.recompute_gap_open = false;
  n.redistribution_gap_open = false;
  order_dirty_ = true;
}

void Overlay::set_levels(std::vector<std::vector<NodeId>> levels) {
  levels_ = std::move(levels);
  order_dirty_ = true;
}

void Overlay::retire(NodeId id) {
  auto& n = node(id);
  if (!n.live) return;
  n.live = false;
  n.links = Links{};
  n.bucket.clear();
  n.bucket_elements = 0;
  --live_count_;
  order_dirty_ = true;
}

}  // namespace d2
