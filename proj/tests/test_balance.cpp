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

#include "doctest.h"

#include <random>

#include "d2tree/balance.hpp"

using namespace d2;

namespace {

void fill(Overlay& ov, std::size_t rank, std::size_t count, Key base) {
  NodeId x = ov.expanded_order()[rank];
  for (std::size_t i = 0; i < count; ++i) ov.store_insert(x, base + i);
}

void sync_counters(Overlay& ov) {
  recompute_subtree_exact(ov, ov.root(), Counter::kWeight);
  recompute_subtree_exact(ov, ov.root(), Counter::kSize);
}

std::vector<Key> flatten(const Overlay& ov) {
  std::vector<Key> out;
  for (NodeId x : ov.expanded_order()) {
    const auto& s = ov.node(x).store;
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

}  // namespace

TEST_CASE("criticality from virtual counters") {
  auto ov = Overlay::build_initial(2, 1);
  NodeId p = ov.at(1, 0), q = ov.at(1, 1);
  CHECK(criticality(ov, p, q) == Rational(1, 1));
  ov.node(p).vweight = 2;
  ov.node(q).vweight = 4;
  CHECK(criticality(ov, p, q) == Rational(1, 2));
  ov.node(q).vweight = 0;
  CHECK_FALSE(criticality(ov, p, q).has_value());
  // d(p) = 3, d(q) = 1 with c = 2.
  ov.node(p).vweight = 6;
  ov.node(q).vweight = 2;
  CHECK(criticality(ov, p, q) == Rational(3, 1));
  CHECK(brothers_violate(ov, p, q));
  CHECK(check_and_trigger(ov, p) == ov.root());
  ov.node(p).vweight = 4;
  CHECK_FALSE(brothers_violate(ov, p, q));
}

TEST_CASE("balanced overlay with one insert does not trigger") {
  auto ov = Overlay::build_initial(3, 2);
  for (std::size_t r = 0; r < ov.expanded_order().size(); ++r) fill(ov, r, 5, r * 100);
  sync_counters(ov);
  NodeId leaf = ov.at(2, 2);
  ov.store_insert(leaf, 2 * 100 + 50);
  on_local_update(ov, leaf, Counter::kWeight, ov.next_op(OpKind::kInsert));
  CHECK_FALSE(check_and_trigger(ov, leaf).has_value());
}

TEST_CASE("the highest violating pair wins") {
  auto ov = Overlay::build_initial(3, 1);
  const std::size_t m = ov.expanded_order().size();
  for (std::size_t r = 0; r < m; ++r) fill(ov, r, 4, r * 100);
  sync_counters(ov);
  // Leaf (2,0) is overloaded against (2,1), and the left half against the right.
  NodeId leaf = ov.at(2, 0);
  ov.node(leaf).vweight = 60;
  ov.node(ov.at(1, 0)).vweight = 80;
  CHECK(brothers_violate(ov, leaf, ov.at(2, 1)));
  CHECK(brothers_violate(ov, ov.at(1, 0), ov.at(1, 1)));
  CHECK(check_and_trigger(ov, leaf) == ov.root());
  ov.node(ov.at(1, 0)).vweight = 25;
  CHECK(check_and_trigger(ov, leaf) == ov.at(1, 0));
}

TEST_CASE("redistribution targets and fixed point") {
  auto ov = Overlay::build_initial(1, 2);
  fill(ov, 2, 10, 0);
  sync_counters(ov);
  auto rep = redistribute_elements(ov, ov.root(), ov.next_op(OpKind::kMaintenance));
  CHECK(rep.nodes == 3);
  CHECK(rep.elements == 10);
  const auto& o = ov.expanded_order();
  // Node i gets floor((i+1)n/m) - floor(in/m): 3, 3, 4.
  CHECK(ov.node(o[0]).store.size() == 3);
  CHECK(ov.node(o[1]).store.size() == 3);
  CHECK(ov.node(o[2]).store.size() == 4);
  CHECK(rep.moved == 6);
  auto again = redistribute_elements(ov, ov.root(), ov.next_op(OpKind::kMaintenance));
  CHECK(again.moved == 0);
}

TEST_CASE("redistribution preserves order and flattens load") {
  std::mt19937_64 rng(5);
  auto ov = Overlay::build_initial(4, 3);
  const auto order = ov.expanded_order();
  std::vector<Key> all;
  Key k = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    std::size_t c = rng() % 30;
    fill(ov, r, c, k);
    for (std::size_t i = 0; i < c; ++i) all.push_back(k + i);
    k += c + rng() % 5;
  }
  sync_counters(ov);
  NodeId v = ov.at(1, 1);
  auto rep = redistribute_elements(ov, v, ov.next_op(OpKind::kMaintenance));
  CHECK(flatten(ov) == all);
  std::size_t lo = SIZE_MAX, hi = 0;
  for (NodeId x : ov.subtree_nodes(v)) {
    lo = std::min(lo, ov.node(x).store.size());
    hi = std::max(hi, ov.node(x).store.size());
  }
  CHECK(hi - lo <= 1);
  CHECK(rep.messages >= rep.moved);
  CHECK(validate_weights(ov).empty());
  NodeId p = ov.at(2, 2), q = ov.at(2, 3);
  // Loads differ by at most one per node, so the ratio is within one
  // element of the smaller density.
  auto c = criticality(ov, p, q)->to_double();
  const double dp = static_cast<double>(ov.node(p).vweight) / static_cast<double>(ov.node(p).vsize);
  const double dq = static_cast<double>(ov.node(q).vweight) / static_cast<double>(ov.node(q).vsize);
  const double d = std::min(dp, dq);
  CHECK(c >= 1 - 1 / d);
  CHECK(c <= 1 + 1 / d);
  redistribute_elements(ov, ov.root(), ov.next_op(OpKind::kMaintenance));
  CHECK(validate_balance(ov).empty());
}

TEST_CASE("batching changes transfers, not messages") {
  auto run = [](std::uint32_t batch) {
    Config c;
    c.batch = batch;
    auto ov = Overlay::build_initial(3, 2, c);
    fill(ov, 0, 200, 0);
    sync_counters(ov);
    return redistribute_elements(ov, ov.root(), ov.next_op(OpKind::kMaintenance));
  };
  auto one = run(1), eight = run(8);
  CHECK(one.moved == eight.moved);
  CHECK(one.messages == eight.messages);
  CHECK(eight.transfers < one.transfers);
}
