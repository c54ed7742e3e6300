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

#include "d2tree/balance.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace d2 {

namespace {

using i128 = __int128;

NodeId brother_of(const Overlay& ov, NodeId a) {
  const auto& n = ov.node(a);
  return ov.at(n.level, n.pos ^ 1);
}

// True when d(p) exceeds both c * d(q) and d(q) + 1.
bool denser(const Overlay& ov, NodeId p, NodeId q, const Rational& c) {
  const i128 bp = ov.node(p).vweight, sp = ov.node(p).vsize;
  const i128 bq = ov.node(q).vweight, sq = ov.node(q).vsize;
  if (sp <= 0 || sq <= 0) return false;
  const bool ratio = bp * sq * c.den > c.num * bq * sp;
  const bool spread = bp * sq > bq * sp + sp * sq;
  return ratio && spread;
}

}  // namespace

Rational criticality_bound(const Config& config) {
  return Rational(static_cast<std::int64_t>(std::llround(config.c_crit * 1000.0)), 1000);
}

std::optional<Rational> criticality(const Overlay& ov, NodeId p, NodeId q) {
  const auto& np = ov.node(p);
  const auto& nq = ov.node(q);
  if (np.vsize <= 0 || nq.vsize <= 0) throw std::invalid_argument("criticality of an empty subtree");
  if (nq.vweight == 0) {
    if (np.vweight == 0) return Rational(1, 1);
    return std::nullopt;
  }
  return Rational(np.vweight * nq.vsize, np.vsize * nq.vweight);
}

bool brothers_violate(const Overlay& ov, NodeId p, NodeId q) {
  const Rational c = criticality_bound(ov.config());
  return denser(ov, p, q, c) || denser(ov, q, p, c);
}

std::optional<NodeId> check_and_trigger(const Overlay& ov, NodeId u) {
  std::optional<NodeId> found;
  for (NodeId a = ov.anchor(u); ov.node(a).level > 0;) {
    const auto& n = ov.node(a);
    NodeId father = ov.at(n.level - 1, n.pos / 2);
    if (brothers_violate(ov, a, brother_of(ov, a))) found = father;
    a = father;
  }
  return found;
}

MigrationReport redistribute_elements(Overlay& ov, NodeId v, OpTag tag) {
  MigrationReport rep;
  rep.root = v;
  if (ov.redistribution_active) {
    rep.deferred = true;
    return rep;
  }
  ov.redistribution_active = true;
  struct Release {
    Overlay& ov;
    ~Release() { ov.redistribution_active = false; }
  } release{ov};

  auto& net = ov.net();
  const auto before = net.stats().per_op.count(tag.seq) ? net.stats().per_op.at(tag.seq) : 0;
  const std::vector<NodeId> nodes = ov.subtree_nodes(v);
  const std::size_t m = nodes.size();
  rep.nodes = m;

  // Phase 1: counting sweep along the expanded order and back to v.
  NodeId prev = v;
  for (NodeId x : nodes) {
    if (x != prev) net.hop(prev, x, tag, MsgKind::kCountSweep);
    prev = x;
  }
  if (prev != v) net.hop(prev, v, tag, MsgKind::kCountSweep);

  std::vector<Key> keys;
  std::vector<std::size_t> old_holder;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& s = ov.node(nodes[i]).store;
    keys.insert(keys.end(), s.begin(), s.end());
    old_holder.insert(old_holder.end(), s.size(), i);
  }
  const std::size_t n = keys.size();
  rep.elements = n;

  // Retrigger distance at v, measured from the last redistribution that
  // covered v's subtree.
  {
    auto& vn = ov.node(v);
    if (vn.redistribution_gap_open) {
      ++ov.counters().retriggers;
      if (4 * vn.updates_since_redistribution < static_cast<std::uint64_t>(vn.w_at_redistribution)) {
        ++ov.counters().retriggers_short;
      }
    }
  }

  // Phase 2: the dest token walks from the rightmost node to the left;
  // each node learns its target and ships its surplus towards it.
  // Remainders are spread evenly, so no child subtree ends up a whole
  // element per node denser than its brother.
  std::vector<std::size_t> target(m);
  for (std::size_t i = 0; i < m; ++i) target[i] = (i + 1) * n / m - i * n / m;
  for (std::size_t i = m; i-- > 1;) net.hop(nodes[i], nodes[i - 1], tag, MsgKind::kTokenPass);

  std::map<std::pair<std::size_t, std::size_t>, std::uint64_t> flows;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < target[i]; ++k, ++pos) {
      if (old_holder[pos] != i) ++flows[{old_holder[pos], i}];
    }
  }
  const std::uint32_t batch = ov.config().batch;
  for (auto [pair, count] : flows) {
    net.bulk(nodes[pair.first], nodes[pair.second], tag, MsgKind::kElementTransfer, count);
    rep.moved += count;
    rep.transfers += (count + batch - 1) / batch;
  }

  pos = 0;
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<Key> mine(keys.begin() + static_cast<std::ptrdiff_t>(pos),
                          keys.begin() + static_cast<std::ptrdiff_t>(pos + target[i]));
    pos += target[i];
    if (mine != ov.node(nodes[i]).store) ov.store_assign(nodes[i], std::move(mine));
  }

  {
    auto [lo, hi] = std::minmax_element(nodes.begin(), nodes.end(), [&](NodeId a, NodeId b) {
      return ov.node(a).store.size() < ov.node(b).store.size();
    });
    if (ov.node(*hi).store.size() > ov.node(*lo).store.size() + 1) {
      ++ov.counters().element_spread_violations;
    }
  }
  recompute_subtree_exact(ov, v, Counter::kWeight);
  recompute_subtree_exact(ov, v, Counter::kSize);
  for (NodeId x : nodes) {
    auto& xn = ov.node(x);
    if (!xn.is_pbt()) continue;
    xn.redistribution_gap_open = true;
    xn.w_at_redistribution = xn.vweight;
    xn.updates_since_redistribution = 0;
  }
  auto& k = ov.counters();
  ++k.element_redistributions;
  k.elements_migrated += rep.moved;

  ov.redistribution_active = false;
  propagate_from(ov, v, Counter::kWeight, tag);
  propagate_from(ov, v, Counter::kSize, tag);
  rep.messages = net.stats().per_op.at(tag.seq) - before;
  ov.log_event({"redistribute_elements", tag.seq, v, rep.messages, rep.moved,
                ov.live_count(), "m=" + std::to_string(m) + " n=" + std::to_string(n)});
  return rep;
}

std::vector<MigrationReport> rebalance_elements(Overlay& ov, NodeId u, OpTag tag) {
  std::vector<MigrationReport> out;
  if (!ov.config().balance_elements || ov.redistribution_active) return out;
  NodeId from = u;
  while (auto father = check_and_trigger(ov, from)) {
    out.push_back(redistribute_elements(ov, *father, tag));
    if (out.back().deferred) break;
    from = *father;
  }
  return out;
}

std::vector<std::string> validate_balance(const Overlay& ov) {
  std::vector<std::string> out;
  for (std::uint32_t l = 1; l <= ov.height(); ++l) {
    const auto& lv = ov.level(l);
    for (std::size_t p = 0; p + 1 < lv.size(); p += 2) {
      if (brothers_violate(ov, lv[p], lv[p + 1])) {
        out.push_back("brothers " + std::to_string(lv[p].value) + "," +
                      std::to_string(lv[p + 1].value) + " break the density bound");
      }
    }
  }
  return out;
}

}  // namespace d2
