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


#include "d2tree/index.hpp"

#include <algorithm>
#include <bit>
#include <stdexcept>
#include <string>

#include "d2tree/balance.hpp"
#include "d2tree/membership.hpp"
#include "d2tree/weights.hpp"

namespace d2 {

namespace {

constexpr std::uint32_t kMaxRestarts = 64;

std::uint64_t op_messages(const Overlay& ov, OpTag tag) {
  const auto& per_op = ov.net().stats().per_op;
  auto it = per_op.find(tag.seq);
  return it == per_op.end() ? 0 : it->second;
}

// Runs `body` until it completes without meeting a failed node, healing
// each failure it reports.
template <class Body>
std::uint32_t with_healing(Overlay& ov, OpTag tag, std::vector<Key>& lost, Body body) {
  std::vector<Unreachable> pending;
  for (std::uint32_t restarts = 0;; ++restarts) {
    if (restarts > kMaxRestarts) throw std::runtime_error("too many restarts after failures");
    try {
      while (!pending.empty()) {
        const Unreachable e = pending.back();
        auto gone = heal_failure(ov, e.reporter(), e.dead(), tag);
        pending.pop_back();
        lost.insert(lost.end(), gone.begin(), gone.end());
      }
      body();
      return restarts;
    } catch (const Unreachable& e) {
      pending.push_back(e);
    }
  }
}

class Search {
 public:
  Search(Overlay& ov, OpTag tag, Key alpha) : ov_(ov), tag_(tag), alpha_(alpha) {}

  NodeId run(NodeId start) {
    if (at(start) == Direction::kHere) return start;
    NodeId v = start;
    if (!ov_.node(v).is_pbt()) {
      // Members search along their row first; an empty bucket on the row
      // sends the search up through the representative instead.
      try {
        return settle_row(level(v));
      } catch (const RowGap& g) {
        v = g.at;
      }
      const NodeId rep = *links(v).bucket_rep;
      move(v, rep, MsgKind::kSearchMove, vertical_);
      v = rep;
      if (at(v) == Direction::kHere) return v;
    }
    Bracket b = level(v);
    if (b.owner) return *b.owner;
    return descend_bracket(b);
  }

  std::uint64_t horizontal() const { return horizontal_; }
  std::uint64_t vertical() const { return vertical_; }

 private:
  // The owner lies strictly between level neighbours u and w; `cur` is the
  // one of them the search stands on.
  struct Bracket {
    OptNode owner;
    OptNode u;
    OptNode w;
    NodeId cur;
  };

  // A row link is missing because a bucket is empty.
  struct RowGap {
    NodeId at;
  };

  Bracket level(NodeId v) {
    return ov_.config().mode == RoutingMode::kTable ? level_table(v) : level_hyper(v);
  }

  static NodeId need(const OptNode& o, NodeId cur) {
    if (!o) throw RowGap{cur};
    return *o;
  }

  // Row neighbours u and w sit in adjacent buckets q and q+1. Between them
  // lie the rest of u's bucket, the common ancestor of the two leaves, the
  // leaf of bucket q+1 and the members of that bucket before w.
  NodeId settle_row(const Bracket& b) {
    if (b.owner) return *b.owner;
    const std::uint64_t width = std::uint64_t{1} << ov_.height();
    const NodeId cur = b.cur;
    if (b.u && b.w && pos(*b.w) != pos(*b.u) + 1) throw RowGap{cur};
    if (b.u && !b.w && pos(*b.u) + 1 != width) throw RowGap{cur};
    if (!b.u && b.w && pos(*b.w) != 0) throw RowGap{cur};
    auto step = [&](NodeId from, NodeId to) {
      move(from, to, MsgKind::kBucketWalk, vertical_);
      return at(to);
    };
    auto lost = [] { return std::logic_error("row search lost the owner"); };
    NodeId x = cur;
    if (b.u && cur == *b.u) {
      while (links(x).bucket_next) {
        const NodeId n = *links(x).bucket_next;
        const Direction d = step(x, n);
        if (d == Direction::kHere) return n;
        if (d == Direction::kLeft) throw lost();
        x = n;
      }
      const NodeId rep = *links(x).bucket_rep;
      move(x, rep, MsgKind::kSearchMove, vertical_);
      if (!links(rep).inorder_next) throw lost();
      const NodeId a = *links(rep).inorder_next;
      Direction d = step(rep, a);
      if (d == Direction::kHere) return a;
      if (d == Direction::kLeft || !links(a).inorder_next) throw lost();
      const NodeId leaf = *links(a).inorder_next;
      d = step(a, leaf);
      if (d == Direction::kHere) return leaf;
      return bucket_walk(leaf);
    }
    while (links(x).bucket_prev) {
      const NodeId n = *links(x).bucket_prev;
      const Direction d = step(x, n);
      if (d == Direction::kHere) return n;
      if (d == Direction::kRight) throw lost();
      x = n;
    }
    const NodeId rep = *links(x).bucket_rep;
    Direction d = step(x, rep);
    if (d == Direction::kHere) return rep;
    if (d == Direction::kRight || !links(rep).inorder_prev) throw lost();
    const NodeId a = *links(rep).inorder_prev;
    d = step(rep, a);
    if (d == Direction::kHere) return a;
    if (d == Direction::kRight || !links(a).inorder_prev) throw lost();
    const NodeId leaf = *links(a).inorder_prev;
    move(a, leaf, MsgKind::kSearchMove, vertical_);
    return bucket_walk(leaf);
  }

  Direction at(NodeId x) const { return ov_.classify(x, alpha_); }
  const Links& links(NodeId x) const { return ov_.node(x).links; }
  std::uint64_t pos(NodeId x) const { return ov_.node(x).pos; }

  void move(NodeId from, NodeId to, MsgKind kind, std::uint64_t& counter) {
    ov_.net().hop(from, to, tag_, kind, {alpha_});
    ++counter;
  }

  // Probes `to` from `from`; a target on the wrong side bounces back.
  Direction probe(NodeId from, NodeId to, Direction keep) {
    move(from, to, MsgKind::kProbe, horizontal_);
    const Direction d = at(to);
    if (d != Direction::kHere && d != keep) move(to, from, MsgKind::kProbeBounce, horizontal_);
    return d;
  }

  Bracket level_table(NodeId v) {
    const Direction dir = at(v);
    const std::uint32_t l = ov_.node(v).level;
    NodeId cur = v;
    for (std::uint32_t i = l; i-- > 0;) {
      const auto& table = dir == Direction::kRight ? links(cur).routing_right
                                                   : links(cur).routing_left;
      if (!table[i]) continue;
      const NodeId t = *table[i];
      const Direction d = probe(cur, t, dir);
      if (d == Direction::kHere) return {t, {}, {}, t};
      if (d == dir) cur = t;
    }
    if (l == 0) return {{}, dir == Direction::kRight ? OptNode{cur} : OptNode{},
                        dir == Direction::kLeft ? OptNode{cur} : OptNode{}, cur};
    if (dir == Direction::kRight) return {{}, cur, links(cur).routing_right[0], cur};
    return {{}, links(cur).routing_left[0], cur, cur};
  }

  Bracket level_hyper(NodeId v) {
    const std::uint32_t l = ov_.node(v).level;
    const std::uint64_t width = std::uint64_t{1} << l;
    const auto& hv = *links(v).hyper;
    NodeId cur = v;
    const std::uint64_t guard = 16 * (std::uint64_t{l} + 2) + 4 * width;
    if (at(v) == Direction::kRight) {
      // Known: positions <= lo are right of nothing we need; the boundary
      // lies in [lo, hi).
      std::uint64_t lo = pos(v), hi = width;
      bool linear = false;
      if (hv.max_rank != v) {
        const NodeId p = hv.max_rank;
        const Direction d = probe(v, p, Direction::kRight);
        if (d == Direction::kHere) return {p, {}, {}, p};
        if (d == Direction::kRight) {
          cur = p;
          lo = pos(p);
        } else {
          hi = pos(p);
          linear = true;
        }
      }
      for (std::uint64_t step = 0; !(hi - lo == 1 && pos(cur) == lo); ++step) {
        if (step > guard) throw std::logic_error("hypernode level search did not converge");
        const auto& h = *links(cur).hyper;
        if (h.far_right && pos(*h.far_right) > lo && pos(*h.far_right) < hi) {
          const NodeId t = *h.far_right;
          const Direction d = probe(cur, t, Direction::kRight);
          if (d == Direction::kHere) return {t, {}, {}, t};
          if (d == Direction::kRight) {
            cur = t;
            lo = pos(t);
          } else {
            hi = pos(t);
          }
          continue;
        }
        if (!linear && h.rank > 1 && h.rank_prev) {
          // Backward link: a shorter jump from the next lower rank.
          move(cur, *h.rank_prev, MsgKind::kProbe, horizontal_);
          cur = *h.rank_prev;
          continue;
        }
        linear = true;
        const NodeId n = need(h.rank_next, cur);
        if (pos(n) <= lo) {
          move(cur, n, MsgKind::kProbe, horizontal_);
          cur = n;
          continue;
        }
        const Direction d = probe(cur, n, Direction::kRight);
        if (d == Direction::kHere) return {n, {}, {}, n};
        if (d == Direction::kRight) {
          cur = n;
          lo = pos(n);
        } else {
          hi = pos(n);
        }
      }
      return {{}, cur, hi < width ? links(cur).hyper->rank_next : OptNode{}, cur};
    }
    // Owner to the left: every node right of v is known to be left-facing.
    if (hv.max_rank != v) {
      move(v, hv.max_rank, MsgKind::kProbe, horizontal_);
      cur = hv.max_rank;
    }
    std::int64_t lo = -1;  // rightmost position known to face right
    for (std::uint64_t step = 0; static_cast<std::int64_t>(pos(cur)) - lo != 1; ++step) {
      if (step > guard) throw std::logic_error("hypernode level search did not converge");
      const auto& h = *links(cur).hyper;
      NodeId t = need(h.rank_prev, cur);
      if (h.far_left && static_cast<std::int64_t>(pos(*h.far_left)) > lo &&
          pos(*h.far_left) < pos(cur)) {
        t = *h.far_left;
      }
      const Direction d = probe(cur, t, Direction::kLeft);
      if (d == Direction::kHere) return {t, {}, {}, t};
      if (d == Direction::kLeft) {
        cur = t;
      } else {
        lo = static_cast<std::int64_t>(pos(t));
      }
    }
    return {{}, lo >= 0 ? links(cur).hyper->rank_prev : OptNode{}, cur, cur};
  }

  NodeId descend_bracket(const Bracket& b) {
    const std::uint32_t h = ov_.height();
    if (!b.u) return descend(*b.w);
    if (!b.w) return descend(*b.u);
    const NodeId u = *b.u;
    NodeId cur = b.cur;
    if (ov_.node(u).level == h) {
      // Between two adjacent leaves lie u's bucket and their common
      // ancestor, which is u's inorder successor.
      if (cur != u) {
        move(cur, u, MsgKind::kSearchMove, vertical_);
        cur = u;
      }
      if (ov_.classify_bucket(u, alpha_) == Direction::kHere) return bucket_walk(u);
      const NodeId a = *links(u).inorder_next;
      move(u, a, MsgKind::kSearchMove, vertical_);
      if (at(a) != Direction::kHere) throw std::logic_error("search bracket lost the owner");
      return a;
    }
    const auto up = static_cast<std::uint32_t>(std::countr_one(pos(u))) + 1;
    for (std::uint32_t i = 0; i < up; ++i) {
      const NodeId p = *links(cur).parent;
      move(cur, p, MsgKind::kSearchMove, vertical_);
      cur = p;
    }
    return descend(cur);
  }

  NodeId descend(NodeId x) {
    for (;;) {
      const auto& n = ov_.node(x);
      if (n.role == Role::kLeaf) {
        if (ov_.classify_bucket(x, alpha_) != Direction::kHere) {
          throw std::logic_error("search descent left its region");
        }
        return at(x) == Direction::kHere ? x : bucket_walk(x);
      }
      const Direction d = at(x);
      if (d == Direction::kHere) return x;
      const NodeId next = d == Direction::kLeft ? *n.links.left_child : *n.links.right_child;
      move(x, next, MsgKind::kSearchMove, vertical_);
      x = next;
    }
  }

  NodeId bucket_walk(NodeId leaf) {
    OptNode m = links(leaf).bucket_head;
    NodeId from = leaf;
    while (m) {
      move(from, *m, MsgKind::kBucketWalk, vertical_);
      if (at(*m) == Direction::kHere) return *m;
      from = *m;
      m = links(*m).bucket_next;
    }
    throw std::logic_error("bucket walk passed the owner");
  }

  Overlay& ov_;
  OpTag tag_;
  Key alpha_;
  std::uint64_t horizontal_ = 0;
  std::uint64_t vertical_ = 0;
};

// Next node in expanded order and the hops taken to reach it.
std::optional<NodeId> forward(Overlay& ov, NodeId x, OpTag tag) {
  const auto& n = ov.node(x);
  auto hop = [&](NodeId from, NodeId to) {
    ov.net().hop(from, to, tag, MsgKind::kRangeForward);
    return to;
  };
  if (n.role == Role::kBucketMember) {
    if (n.links.bucket_next) return hop(x, *n.links.bucket_next);
    // The tail has no tree links of its own; it forwards through its leaf.
    const NodeId rep = *n.links.bucket_rep;
    const auto& next = ov.node(rep).links.inorder_next;
    if (!next) return std::nullopt;
    hop(x, rep);
    return hop(rep, *next);
  }
  if (n.role == Role::kLeaf && n.links.bucket_head) return hop(x, *n.links.bucket_head);
  if (!n.links.inorder_next) return std::nullopt;
  return hop(x, *n.links.inorder_next);
}

void reply(Overlay& ov, NodeId from, NodeId to, OpTag tag, std::uint64_t words) {
  if (from == to) return;
  const std::uint64_t count = std::max<std::uint64_t>(1, (words + kMaxPayload - 1) / kMaxPayload);
  ov.net().bulk(from, to, tag, MsgKind::kReply, count);
}

// Weight report from the owner, then balance repair. A failure met here is
// healed; the replacement rebuilds its counters from its children, so a
// restart only needs the repair part.
void after_update(Overlay& ov, NodeId owner, OpTag tag, std::int64_t delta,
                  UpdateResult& r) {
  bool reported = false;
  r.restarts += with_healing(ov, tag, r.lost, [&] {
    if (!reported) {
      reported = true;
      on_local_update(ov, owner, Counter::kWeight, tag, delta);
    }
    if (ov.is_live(owner)) rebalance_elements(ov, owner, tag);
    restore_invariants(ov, tag);
  });
}

}  // namespace

SearchResult search(Overlay& ov, NodeId start, Key alpha, OpTag tag) {
  if (!ov.is_live(start)) throw std::invalid_argument("search from a node that is not live");
  SearchResult r;
  const auto before = op_messages(ov, tag);
  r.restarts = with_healing(ov, tag, r.lost, [&] {
    Search s(ov, tag, alpha);
    r.owner = s.run(start);
    r.horizontal = s.horizontal();
    r.vertical = s.vertical();
    reply(ov, r.owner, start, tag, 1);
  });
  r.messages = op_messages(ov, tag) - before;
  return r;
}

RangeResult range_query(Overlay& ov, NodeId start, Key a, Key b, OpTag tag) {
  if (!ov.is_live(start)) throw std::invalid_argument("range query from a node that is not live");
  RangeResult r;
  if (a > b) return r;
  const auto before = op_messages(ov, tag);
  r.restarts = with_healing(ov, tag, r.lost, [&] {
    r.keys.clear();
    r.nodes_visited = 0;
    NodeId x = Search(ov, tag, a).run(start);
    for (;;) {
      ++r.nodes_visited;
      const auto& s = ov.node(x).store;
      auto lo = std::lower_bound(s.begin(), s.end(), a);
      auto hi = std::upper_bound(lo, s.end(), b);
      if (lo != hi) {
        r.keys.insert(r.keys.end(), lo, hi);
        reply(ov, x, start, tag, static_cast<std::uint64_t>(hi - lo));
      }
      if (hi != s.end()) break;
      auto next = forward(ov, x, tag);
      if (!next) break;
      x = *next;
    }
    reply(ov, x, start, tag, 0);
  });
  r.messages = op_messages(ov, tag) - before;
  return r;
}

UpdateResult insert(Overlay& ov, NodeId start, Key alpha, OpTag tag) {
  if (!ov.is_live(start)) throw std::invalid_argument("insert from a node that is not live");
  UpdateResult r;
  const auto before = op_messages(ov, tag);
  r.restarts += with_healing(ov, tag, r.lost, [&] {
    r.owner = Search(ov, tag, alpha).run(start);
  });
  ov.store_insert(r.owner, alpha);
  after_update(ov, r.owner, tag, 1, r);
  r.messages = op_messages(ov, tag) - before;
  return r;
}

UpdateResult erase(Overlay& ov, NodeId start, Key alpha, OpTag tag) {
  if (!ov.is_live(start)) throw std::invalid_argument("delete from a node that is not live");
  UpdateResult r;
  const auto before = op_messages(ov, tag);
  r.restarts += with_healing(ov, tag, r.lost, [&] {
    r.owner = Search(ov, tag, alpha).run(start);
  });
  r.found = ov.store_erase(r.owner, alpha);
  if (r.found) after_update(ov, r.owner, tag, -1, r);
  r.messages = op_messages(ov, tag) - before;
  return r;
}

NodeId owner_by_scan(const Overlay& ov, Key alpha) {
  const auto& order = ov.expanded_order();
  std::optional<Key> floor;
  for (NodeId x : order) {
    for (Key k : ov.node(x).store) {
      if (k <= alpha && (!floor || k > *floor)) floor = k;
    }
  }
  std::optional<NodeId> first, last;
  for (NodeId x : order) {
    const auto& s = ov.node(x).store;
    if (s.empty()) continue;
    if (!floor) return x;
    if (std::binary_search(s.begin(), s.end(), *floor)) {
      if (!first) first = x;
      last = x;
    }
  }
  if (floor) return *floor == alpha ? *first : *last;
  const NodeId leftmost = order.front();
  const auto& bucket = ov.node(leftmost).bucket;
  return bucket.empty() ? leftmost : bucket.front();
}

std::vector<std::string> validate_order(const Overlay& ov) {
  std::vector<std::string> out;
  std::optional<Key> last;
  NodeId last_node;
  for (NodeId x : ov.expanded_order()) {
    const auto& s = ov.node(x).store;
    if (!std::is_sorted(s.begin(), s.end())) {
      out.push_back("node " + std::to_string(x.value) + " store not sorted");
    }
    if (s.empty()) continue;
    if (last && s.front() < *last) {
      out.push_back("node " + std::to_string(x.value) + " starts below node " +
                    std::to_string(last_node.value));
    }
    last = s.back();
    last_node = x;
  }
  return out;
}

}  // namespace d2
