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

#include "d2tree/weights.hpp"

using namespace d2;

namespace {

// Recount of a subtree straight from the expanded order.
std::int64_t flat_weight(const Overlay& ov, NodeId v) {
  std::int64_t w = 0;
  for (NodeId x : ov.subtree_nodes(v)) w += static_cast<std::int64_t>(ov.node(x).store.size());
  return w;
}

void insert_at(Overlay& ov, NodeId x, Key k) {
  ov.store_insert(x, k);
  on_local_update(ov, x, Counter::kWeight, ov.next_op(OpKind::kInsert), 1);
}

}  // namespace

TEST_CASE("epsilon values") {
  CHECK(epsilon(2) == Rational(1, 4));
  CHECK(epsilon(1) == Rational(1, 1));
  CHECK(epsilon_product(4) == Rational(5, 8));
  for (std::uint32_t h = 2; h < 20; ++h) CHECK(epsilon_product(h) == Rational(h + 1, 2 * h));
  CHECK_THROWS(epsilon(0));
  CHECK(slack_index(1) == 2);
}

TEST_CASE("true weight oracle") {
  auto ov = Overlay::build_initial(4, 2);
  CHECK(true_weight(ov, ov.root()) == 0);
  const auto& order = ov.expanded_order();
  for (std::size_t r = 0; r < order.size(); ++r) {
    for (Key k = 0; k < 3; ++k) ov.store_insert(order[r], r * 10 + k);
  }
  for (std::uint32_t l = 0; l <= ov.height(); ++l) {
    for (NodeId v : ov.level(l)) {
      CHECK(true_weight(ov, v) == 3 * static_cast<std::int64_t>(ov.subtree_nodes(v).size()));
      CHECK(true_size(ov, v) == static_cast<std::int64_t>(ov.subtree_nodes(v).size()));
    }
  }
  CHECK(true_weight(ov, ov.root()) == ov.total_elements());
}

TEST_CASE("single update with a satisfied parent recomputes nothing above") {
  auto ov = Overlay::build_initial(3, 1);
  const auto& order = ov.expanded_order();
  for (std::size_t r = 0; r < order.size(); ++r) {
    for (Key k = 0; k < 20; ++k) ov.store_insert(order[r], r * 100 + k);
  }
  recompute_subtree_exact(ov, ov.root(), Counter::kWeight);
  NodeId leaf = ov.at(2, 1);
  ov.store_insert(leaf, 150);
  auto rec = on_local_update(ov, leaf, Counter::kWeight, ov.next_op(OpKind::kInsert));
  CHECK(rec.empty());
  CHECK(ov.node(leaf).vweight == 41);
  CHECK(validate_weights(ov).empty());
}

TEST_CASE("weight bounds hold after random updates") {
  for (std::uint32_t levels : {1u, 3u, 6u}) {
    auto ov = Overlay::build_initial(levels, 2);
    std::mt19937_64 rng(levels);
    const auto order = ov.expanded_order();
    std::vector<std::pair<NodeId, Key>> live;
    for (int i = 0; i < 4000; ++i) {
      if (live.empty() || rng() % 3 != 0) {
        NodeId x = order[rng() % order.size()];
        Key k = rng() % 1000000;
        insert_at(ov, x, k);
        live.emplace_back(x, k);
      } else {
        std::size_t j = rng() % live.size();
        auto [x, k] = live[j];
        live[j] = live.back();
        live.pop_back();
        REQUIRE(ov.store_erase(x, k));
        on_local_update(ov, x, Counter::kWeight, ov.next_op(OpKind::kDelete), -1);
      }
      if (i % 97 == 0) REQUIRE(validate_weights(ov).empty());
    }
    CHECK(validate_weights(ov).empty());
    CHECK(true_weight(ov, ov.root()) == static_cast<std::int64_t>(live.size()));
    for (std::uint32_t l = 0; l <= ov.height(); ++l) {
      for (NodeId v : ov.level(l)) CHECK(true_weight(ov, v) == flat_weight(ov, v));
    }
  }
}

TEST_CASE("repeated inserts at one leaf respect the recompute gap") {
  auto ov = Overlay::build_initial(6, 1);
  const auto order = ov.expanded_order();
  for (std::size_t r = 0; r < order.size(); ++r) {
    for (Key k = 0; k < 16; ++k) ov.store_insert(order[r], r * 1000000 + k);
  }
  recompute_subtree_exact(ov, ov.root(), Counter::kWeight);
  NodeId leaf = ov.at(5, 7);
  for (Key k = 0; k < 20000; ++k) insert_at(ov, leaf, ov.node(leaf).store.back());
  CHECK(ov.counters().recompute_gaps > 10);
  CHECK(ov.counters().recompute_gaps_short == 0);
  CHECK(validate_weights(ov).empty());
}

TEST_CASE("a corrupted counter is reported at that node") {
  auto ov = Overlay::build_initial(4, 1);
  const auto order = ov.expanded_order();
  for (std::size_t r = 0; r < order.size(); ++r) ov.store_insert(order[r], r);
  recompute_subtree_exact(ov, ov.root(), Counter::kWeight);
  NodeId v = ov.at(2, 1);
  ov.node(v).vweight *= 5;
  const std::string tag = "node " + std::to_string(v.value) + " weight: b=";
  std::size_t bound_lines = 0;
  for (const auto& s : validate_weights(ov)) {
    if (s.find("outside factor 2") != std::string::npos) {
      ++bound_lines;
      CHECK(s.rfind(tag, 0) == 0);
    }
  }
  CHECK(bound_lines == 1);
}

TEST_CASE("size counters follow the same rule") {
  auto ov = Overlay::build_initial(4, 3);
  CHECK(validate_weights(ov).empty());
  CHECK(ov.node(ov.root()).vsize == 15 + 8 * 3);
}
