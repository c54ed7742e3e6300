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

#include "d2tree/simnet.hpp"

using namespace d2;

namespace {

OpTag tag(std::uint64_t seq) { return {OpKind::kSearch, seq}; }

}  // namespace

TEST_CASE("simnet counts one message per send") {
  SimNet net(7);
  NodeId a = net.add_node(), b = net.add_node();
  net.send(Message(a, b, tag(1), MsgKind::kProbe));
  CHECK(net.stats().per_op.at(1) == 1);
  for (int i = 0; i < 9; ++i) net.send(Message(a, b, tag(2), MsgKind::kReply));
  CHECK(net.stats().per_op.at(2) == 9);
  CHECK(net.stats().total_sends() == net.stats().total_receives() + net.in_flight());
  net.run_to_quiescence();
  CHECK(net.stats().total_receives() == 10);
  CHECK(net.stats().accesses[b.value] == 1);
}

TEST_CASE("empty queue delivers nothing") {
  SimNet net;
  net.add_node();
  auto before = net.snapshot_stats();
  CHECK(net.run_to_quiescence().empty());
  CHECK(net.snapshot_stats() == before);
}

TEST_CASE("request and reply exchange is two messages") {
  SimNet net;
  NodeId a = net.add_node(), b = net.add_node();
  net.set_handler([&](const Message& m) {
    if (m.kind == MsgKind::kHealProbe) net.send(Message(m.dst, m.src, m.tag, MsgKind::kReply));
  });
  net.send(Message(a, b, tag(3), MsgKind::kHealProbe, {42}));
  net.run_to_quiescence();
  CHECK(net.stats().total_sends() == 2);
  CHECK(net.stats().per_op.at(3) == 2);
}

TEST_CASE("delivery to a failed node bounces to the sender") {
  SimNet net;
  NodeId a = net.add_node(), b = net.add_node();
  net.fail_node(b);
  net.send(Message(a, b, tag(1), MsgKind::kProbe));
  auto bounces = net.run_to_quiescence();
  REQUIRE(bounces.size() == 1);
  CHECK(bounces[0].src == a);
  CHECK(net.stats().bounced[a.value] == 1);
  CHECK_THROWS_AS(net.hop(a, b, tag(2), MsgKind::kProbe), Unreachable);
  CHECK(net.stats().total_sends() == net.stats().total_receives() + net.stats().total_bounced());
  CHECK_THROWS_AS(net.send(Message(b, a, tag(3), MsgKind::kReply)), std::logic_error);
  net.fail_node(b);
  CHECK(net.stats().duplicate_failures == 1);
}

TEST_CASE("no failures means every delivery succeeds") {
  SimNet net(3);
  std::vector<NodeId> ids;
  for (int i = 0; i < 6; ++i) ids.push_back(net.add_node());
  for (int i = 0; i < 100; ++i) {
    net.send(Message(ids[i % 6], ids[(i * 7 + 1) % 6], tag(1), MsgKind::kReply));
  }
  CHECK(net.run_to_quiescence().empty());
  CHECK(net.stats().total_receives() == 100);
}

TEST_CASE("per pair delivery is FIFO and runs are deterministic") {
  auto run = [](std::uint64_t seed) {
    SimNet net(seed);
    std::vector<NodeId> ids;
    for (int i = 0; i < 4; ++i) ids.push_back(net.add_node());
    std::vector<std::pair<std::uint64_t, std::uint64_t>> trace;
    net.set_handler([&](const Message& m) { trace.emplace_back(m.src.value, m.payload[0]); });
    for (std::uint64_t i = 0; i < 50; ++i) {
      net.send(Message(ids[i % 3], ids[3], tag(i), MsgKind::kProbe, {i}));
    }
    net.run_to_quiescence();
    return std::make_pair(trace, net.snapshot_stats());
  };
  auto [t1, s1] = run(11);
  auto [t2, s2] = run(11);
  CHECK(t1 == t2);
  CHECK(s1 == s2);
  std::map<std::uint64_t, std::uint64_t> last;
  for (auto [src, seq] : t1) {
    if (last.count(src)) CHECK(seq > last[src]);
    last[src] = seq;
  }
}

TEST_CASE("reset and snapshot") {
  SimNet net;
  NodeId a = net.add_node(), b = net.add_node();
  for (int i = 0; i < 5; ++i) net.hop(a, b, tag(1), MsgKind::kReply);
  CHECK(net.snapshot_stats().total_sends() == 5);
  CHECK(net.snapshot_stats() == net.snapshot_stats());
  net.reset_stats();
  CHECK(net.stats().total_sends() == 0);
  CHECK(net.stats().per_op.empty());
}

TEST_CASE("payload is bounded") {
  NodeId a{0}, b{1};
  CHECK_NOTHROW(Message(a, b, tag(1), MsgKind::kReply, {1, 2, 3, 4}));
  CHECK_THROWS_AS(Message(a, b, tag(1), MsgKind::kReply, {1, 2, 3, 4, 5}), std::logic_error);
}

TEST_CASE("bulk accounts each message") {
  SimNet net;
  NodeId a = net.add_node(), b = net.add_node();
  net.bulk(a, b, tag(4), MsgKind::kElementTransfer, 12);
  CHECK(net.stats().per_op.at(4) == 12);
  CHECK(net.stats().receives[b.value] == 12);
  CHECK(net.stats().accesses.size() <= b.value);
}
