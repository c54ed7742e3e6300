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

#include "d2tree/weights.hpp"

#include <numeric>
#include <stdexcept>

namespace d2 {

Rational::Rational(std::int64_t n, std::int64_t d) {
  if (d == 0) throw std::invalid_argument("zero denominator");
  if (d < 0) {
    n = -n;
    d = -d;
  }
  std::int64_t g = std::gcd(n < 0 ? -n : n, d);
  if (g == 0) g = 1;
  num = n / g;
  den = d / g;
}

Rational operator*(const Rational& a, const Rational& b) {
  return Rational(a.num * b.num, a.den * b.den);
}
Rational operator-(const Rational& a, const Rational& b) {
  return Rational(a.num * b.den - b.num * a.den, a.den * b.den);
}
Rational operator+(const Rational& a, const Rational& b) {
  return Rational(a.num * b.den + b.num * a.den, a.den * b.den);
}
bool operator<(const Rational& a, const Rational& b) {
  return static_cast<__int128>(a.num) * b.den < static_cast<__int128>(b.num) * a.den;
}

Rational epsilon(std::uint32_t j) {
  if (j == 0) throw std::invalid_argument("epsilon is defined for j >= 1");
  return Rational(1, static_cast<std::int64_t>(j) * j);
}

Rational epsilon_product(std::uint32_t h) {
  Rational p(1, 1);
  for (std::uint32_t j = 2; j <= h; ++j) p = p * (Rational(1, 1) - epsilon(j));
  return p;
}

std::int64_t& counter_ref(OverlayNode& n, Counter c) {
  return c == Counter::kWeight ? n.vweight : n.vsize;
}

std::int64_t counter_of(const OverlayNode& n, Counter c) {
  return c == Counter::kWeight ? n.vweight : n.vsize;
}

std::int64_t local_of(const Overlay& ov, NodeId v, Counter c) {
  return c == Counter::kWeight ? ov.local_weight(v) : ov.local_size(v);
}

std::int64_t true_aggregate(const Overlay& ov, NodeId v, Counter c) {
  const auto& n = ov.node(v);
  std::int64_t total = local_of(ov, v, c);
  if (n.role == Role::kInternal) {
    total += true_aggregate(ov, *n.links.left_child, c) +
             true_aggregate(ov, *n.links.right_child, c);
  }
  return total;
}

std::int64_t children_sum(const Overlay& ov, NodeId v, Counter c) {
  const auto& n = ov.node(v);
  if (n.role != Role::kInternal) return 0;
  const std::uint32_t l = n.level;
  return counter_of(ov.node(ov.at(l + 1, 2 * n.pos)), c) +
         counter_of(ov.node(ov.at(l + 1, 2 * n.pos + 1)), c);
}

bool invariant_holds(const Overlay& ov, NodeId v, Counter c) {
  const auto& n = ov.node(v);
  const std::int64_t e = local_of(ov, v, c);
  const std::int64_t b = counter_of(n, c);
  if (n.role != Role::kInternal) return b == e;
  const std::int64_t s = children_sum(ov, v, c);
  if (b == e + s) return true;
  const __int128 j = slack_index(ov.height_of(v));
  const __int128 jj = j * j;
  const __int128 lhs = jj * b;
  return lhs > jj * e + (jj - 1) * s && lhs < jj * e + (jj + 1) * s;
}

namespace {

NodeId parent_slot(const Overlay& ov, NodeId v) {
  const auto& n = ov.node(v);
  return ov.at(n.level - 1, n.pos / 2);
}

void recompute(Overlay& ov, NodeId v, Counter c) {
  auto& n = ov.node(v);
  const std::int64_t b = local_of(ov, v, c) + children_sum(ov, v, c);
  counter_ref(n, c) = b;
  auto& k = ov.counters();
  if (c == Counter::kSize) {
    ++k.size_recomputations;
    return;
  }
  ++k.weight_recomputations;
  if (n.recompute_gap_open) {
    ++k.recompute_gaps;
    const auto jj = static_cast<__int128>(slack_index(ov.height_of(v))) *
                    slack_index(ov.height_of(v));
    if (2 * jj * static_cast<__int128>(n.updates_since_recompute) < n.b_recorded) {
      ++k.recompute_gaps_short;
    }
    if (n.b_recorded > 0) {
      const double f = 2.0 * static_cast<double>(jj) *
                       static_cast<double>(n.updates_since_recompute) /
                       static_cast<double>(n.b_recorded);
      if (k.worst_gap_fraction < 0 || f < k.worst_gap_fraction) k.worst_gap_fraction = f;
    }
  }
  n.recompute_gap_open = true;
  n.b_recorded = b;
  n.updates_since_recompute = 0;
}

std::vector<NodeId> walk(Overlay& ov, NodeId cur, Counter c, OpTag tag) {
  std::vector<NodeId> out;
  while (!invariant_holds(ov, cur, c)) {
    recompute(ov, cur, c);
    out.push_back(cur);
    if (ov.node(cur).level == 0) break;
    NodeId p = parent_slot(ov, cur);
    ov.net().hop(cur, p, tag, MsgKind::kWeightReport);
    cur = p;
  }
  return out;
}

}  // namespace

std::vector<NodeId> on_local_update(Overlay& ov, NodeId u, Counter c, OpTag tag,
                                    std::int64_t delta) {
  NodeId x = ov.anchor(u);
  if (u != x) ov.net().hop(u, x, tag, MsgKind::kWeightReport);
  if (c == Counter::kWeight && delta != 0) {
    const auto mag = static_cast<std::uint64_t>(delta < 0 ? -delta : delta);
    for (NodeId a = x;; a = parent_slot(ov, a)) {
      auto& n = ov.node(a);
      n.updates_since_recompute += mag;
      n.updates_since_redistribution += mag;
      if (n.level == 0) break;
    }
  }
  auto& xn = ov.node(x);
  if (xn.role == Role::kLeaf) {
    counter_ref(xn, c) = local_of(ov, x, c);
    if (xn.level == 0) return {};
    NodeId p = parent_slot(ov, x);
    ov.net().hop(x, p, tag, MsgKind::kWeightReport);
    return walk(ov, p, c, tag);
  }
  return walk(ov, x, c, tag);
}

std::vector<NodeId> propagate_from(Overlay& ov, NodeId v, Counter c, OpTag tag) {
  if (ov.node(v).level == 0) return {};
  NodeId p = parent_slot(ov, v);
  ov.net().hop(v, p, tag, MsgKind::kWeightReport);
  return walk(ov, p, c, tag);
}

void recompute_subtree_exact(Overlay& ov, NodeId v, Counter c) {
  auto& n = ov.node(v);
  std::int64_t b = local_of(ov, v, c);
  if (n.role == Role::kInternal) {
    NodeId l = ov.at(n.level + 1, 2 * n.pos), r = ov.at(n.level + 1, 2 * n.pos + 1);
    recompute_subtree_exact(ov, l, c);
    recompute_subtree_exact(ov, r, c);
    b += counter_of(ov.node(l), c) + counter_of(ov.node(r), c);
  }
  counter_ref(n, c) = b;
  if (c == Counter::kWeight) {
    n.recompute_gap_open = true;
    n.b_recorded = b;
    n.updates_since_recompute = 0;
  }
}

std::vector<std::string> validate_weights(const Overlay& ov) {
  std::vector<std::string> out;
  for (std::uint32_t l = 0; l <= ov.height(); ++l) {
    for (NodeId v : ov.level(l)) {
      for (Counter c : {Counter::kWeight, Counter::kSize}) {
        const char* what = c == Counter::kWeight ? "weight" : "size";
        const std::string tag = "node " + std::to_string(v.value) + " " + what;
        const std::int64_t b = counter_of(ov.node(v), c);
        if (!invariant_holds(ov, v, c)) out.push_back(tag + ": lazy invariant violated");
        const std::int64_t w = true_aggregate(ov, v, c);
        const bool ok = w == 0 ? b == 0 : (2 * b > w && b < 2 * w);
        if (!ok) {
          out.push_back(tag + ": b=" + std::to_string(b) + " outside factor 2 of " +
                        std::to_string(w));
        }
      }
    }
  }
  return out;
}

}  // namespace d2
