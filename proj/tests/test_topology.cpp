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

#include <algorithm>
#include <functional>

#include "d2tree/overlay.hpp"

using namespace d2;

namespace {

Config mode_config(RoutingMode m) {
  Config c;
  c.mode = m;
  return c;
}

// Recursive inorder over (level, pos) slots.
void inorder(std::uint32_t h, std::uint32_t l, std::uint64_t p,
             std::vector<std::pair<std::uint32_t, std::uint64_t>>& out) {
  if (l < h) inorder(h, l + 1, 2 * p, out);
  out.emplace_back(l, p);
  if (l < h) inorder(h, l + 1, 2 * p + 1, out);
}

std::size_t routing_links(const Links& L) {
  std::size_t c = 0;
  for (auto& o : L.routing_left) c += o.has_value();
  for (auto& o : L.routing_right) c += o.has_value();
  return c;
}

}  // namespace

TEST_CASE("build_initial sizes") {
  auto one = Overlay::build_initial(1, 1);
  CHECK(one.live_count() == 2);
  CHECK(one.height() == 0);
  CHECK(one.expanded_order().size() == 2);
  CHECK_FALSE(one.node(one.root()).links.inorder_prev);
  CHECK_FALSE(one.node(one.root()).links.inorder_next);

  auto ov = Overlay::build_initial(3, 2);
  CHECK(ov.live_count() == 15);
  CHECK(ov.pbt_count() == 7);
  CHECK(ov.validate_topology().empty());
  CHECK(ov.node(ov.root()).vsize == 15);

  auto big = Overlay::build_initial(4, 3);
  for (NodeId leaf : big.level(3)) CHECK(routing_links(big.node(leaf).links) <= 6);
  for (std::uint32_t l = 0; l <= 3; ++l) {
    for (NodeId v : big.level(l)) CHECK(routing_links(big.node(v).links) <= 2 * l);
  }
}

TEST_CASE("inorder index round trip") {
  for (std::uint32_t h = 0; h <= 6; ++h) {
    std::vector<std::pair<std::uint32_t, std::uint64_t>> ord;
    inorder(h, 0, 0, ord);
    for (std::uint64_t j = 0; j < ord.size(); ++j) {
      CHECK(inorder_index(h, ord[j].first, ord[j].second) == j);
      auto lp = slot_of_inorder(h, j);
      CHECK(lp.level == ord[j].first);
      CHECK(lp.position == ord[j].second);
    }
  }
}

TEST_CASE("inorder adjacency") {
  auto ov = Overlay::build_initial(3, 1);
  NodeId root = ov.root();
  CHECK(ov.inorder_adjacent(root, Side::kLeft) == ov.at(2, 1));
  CHECK(ov.inorder_adjacent(root, Side::kRight) == ov.at(2, 2));
  CHECK_FALSE(ov.inorder_adjacent(ov.at(2, 0), Side::kLeft));
  CHECK_FALSE(ov.inorder_adjacent(ov.at(2, 3), Side::kRight));

  auto h4 = Overlay::build_initial(5, 1);
  std::vector<std::pair<std::uint32_t, std::uint64_t>> ord;
  inorder(4, 0, 0, ord);
  for (std::size_t j = 0; j < ord.size(); ++j) {
    NodeId v = h4.at(ord[j].first, ord[j].second);
    if (j > 0) CHECK(h4.inorder_adjacent(v, Side::kLeft) == h4.at(ord[j - 1].first, ord[j - 1].second));
    if (j + 1 < ord.size()) CHECK(h4.inorder_adjacent(v, Side::kRight) == h4.at(ord[j + 1].first, ord[j + 1].second));
    if (h4.node(v).role == Role::kInternal) {
      CHECK(h4.node(*h4.inorder_adjacent(v, Side::kLeft)).role == Role::kLeaf);
      CHECK(h4.node(*h4.inorder_adjacent(v, Side::kRight)).role == Role::kLeaf);
    }
  }
}

TEST_CASE("expanded order places buckets after their leaf") {
  auto ov = Overlay::build_initial(2, 2);
  const auto& o = ov.expanded_order();
  REQUIRE(o.size() == 7);
  CHECK(o[0] == ov.at(1, 0));
  CHECK(o[1] == ov.node(ov.at(1, 0)).bucket[0]);
  CHECK(o[3] == ov.root());
  CHECK(o[4] == ov.at(1, 1));
  auto [a, b] = ov.subtree_span(ov.at(1, 1));
  CHECK(a == 4);
  CHECK(b == 6);
}

TEST_CASE("routing links respect parent and sibling relations") {
  for (std::uint32_t levels = 2; levels <= 7; ++levels) {
    auto ov = Overlay::build_initial(levels, 1);
    for (std::uint32_t l = 1; l < levels; ++l) {
      for (std::uint64_t p = 0; p < (1u << l); ++p) {
        const auto& L = ov.node(ov.at(l, p)).links;
        for (std::uint32_t i = 0; i < l; ++i) {
          if (!L.routing_right[i]) continue;
          NodeId u = *L.routing_right[i];
          NodeId pv = *L.parent, pu = *ov.node(u).links.parent;
          if (pv != pu) {
            const auto& pl = ov.node(pv).links.routing_right;
            CHECK(std::find(pl.begin(), pl.end(), OptNode{pu}) != pl.end());
          }
          if (p > 0) {
            const auto& sl = ov.node(ov.at(l, p - 1)).links.routing_right;
            CHECK(sl[i] == OptNode{ov.at(l, ov.node(u).pos - 1)});
          }
        }
      }
    }
  }
}

TEST_CASE("routing rebuilt from a sibling equals the initial table") {
  auto ov = Overlay::build_initial(4, 1);
  NodeId v = ov.at(3, 5);
  auto want = ov.node(v).links;
  ov.node(v).links.routing_left.clear();
  ov.node(v).links.routing_right.clear();
  auto msgs = ov.build_routing_from_sibling(v, ov.next_op(OpKind::kHeal));
  REQUIRE(msgs);
  CHECK(*msgs <= 4 * 3 + 6);
  CHECK(ov.node(v).links == want);
  CHECK(ov.node(v).links.routing_right[0] == OptNode{ov.at(3, 6)});

  auto root_msgs = ov.build_routing_from_sibling(ov.root(), ov.next_op(OpKind::kHeal));
  CHECK(root_msgs == std::uint64_t{0});
  CHECK(ov.node(ov.root()).links.routing_right.empty());

  for (std::uint32_t levels : {3u, 5u, 6u}) {
    auto full = Overlay::build_initial(levels, 1);
    for (std::uint32_t l = 1; l < levels; ++l) {
      for (NodeId x : full.level(l)) {
        auto keep = full.node(x).links;
        full.node(x).links.routing_left.assign(l, OptNode{});
        full.node(x).links.routing_right.assign(l, OptNode{});
        REQUIRE(full.build_routing_from_sibling(x, full.next_op(OpKind::kHeal)));
        CHECK(full.node(x).links == keep);
      }
    }
  }
}

TEST_CASE("hypernode grouping") {
  auto ov = Overlay::build_initial(4, 1, mode_config(RoutingMode::kHypernode));
  CHECK(ov.validate_topology().empty());
  for (NodeId v : ov.level(1)) {
    CHECK(ov.node(v).links.hyper->rank == 1);
    CHECK(ov.node(v).links.hyper->max_rank == v);
  }
  std::vector<std::uint32_t> ranks;
  for (NodeId v : ov.level(3)) ranks.push_back(ov.node(v).links.hyper->rank);
  CHECK(ranks == std::vector<std::uint32_t>{1, 2, 3, 1, 2, 3, 1, 2});
  CHECK(ov.node(ov.at(3, 0)).links.hyper->max_rank == ov.at(3, 2));
  CHECK(ov.node(ov.at(3, 7)).links.hyper->max_rank == ov.at(3, 7));
  // Rank 1 at a group start links two positions away.
  CHECK(ov.node(ov.at(3, 3)).links.hyper->far_right == OptNode{ov.at(3, 5)});
  CHECK(ov.node(ov.at(3, 3)).links.hyper->far_left == OptNode{ov.at(3, 0)});
  for (const auto& n : ov.all_nodes()) {
    if (!n.is_pbt()) continue;
    const auto& s = *n.links.hyper;
    std::size_t slot = (s.far_left ? 1 : 0) + (s.far_right ? 1 : 0) + (s.rank_prev ? 1 : 0) +
                       (s.rank_next ? 1 : 0) + 1;
    CHECK(slot <= 7);
    CHECK(n.links.count() <= 12);
    CHECK(n.links.routing_left.empty());
  }
}

TEST_CASE("hypernode links reconstructed from a sibling") {
  auto ov = Overlay::build_initial(5, 1, mode_config(RoutingMode::kHypernode));
  for (std::uint64_t p : {5u, 0u, 15u}) {
    NodeId v = ov.at(4, p);
    auto want = ov.node(v).links;
    ov.node(v).links.hyper.reset();
    auto msgs = ov.hypernode_reconstruct_links(v, ov.next_op(OpKind::kHeal));
    CHECK(msgs <= 12);
    CHECK(ov.node(v).links == want);
  }
  CHECK_FALSE(ov.node(ov.at(4, 15)).links.hyper->rank_next);
  CHECK_FALSE(ov.node(ov.at(4, 15)).links.hyper->far_right);
}

TEST_CASE("validate_topology reports a corrupted link") {
  auto ov = Overlay::build_initial(4, 2);
  CHECK(ov.validate_topology().empty());
  ov.node(ov.at(3, 2)).links.inorder_next = ov.at(3, 6);
  auto v = ov.validate_topology();
  REQUIRE(v.size() == 1);
  CHECK(v[0].find("inorder_next") != std::string::npos);
}

TEST_CASE("sync_links charges one message per changed field") {
  auto ov = Overlay::build_initial(3, 1);
  NodeId a = ov.at(2, 0), b = ov.at(2, 1);
  ov.node(b).links.parent.reset();
  ov.node(b).links.inorder_prev.reset();
  auto msgs = ov.sync_links(a, {b}, ov.next_op(OpKind::kMaintenance));
  CHECK(msgs == 2);
  CHECK(ov.validate_topology().empty());
}

TEST_CASE("dump is deterministic") {
  auto a = Overlay::build_initial(3, 2);
  auto b = Overlay::build_initial(3, 2);
  CHECK(a.dump() == b.dump());
  const std::string d = a.dump();
  CHECK(std::count(d.begin(), d.end(), '\n') == 16);
}
