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

#include "d2tree/simnet.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace d2 {

const char* to_string(OpKind kind) {
  switch (kind) {
    case OpKind::kBuild: return "build";
    case OpKind::kSearch: return "search";
    case OpKind::kRange: return "range";
    case OpKind::kInsert: return "insert";
    case OpKind::kDelete: return "delete";
    case OpKind::kJoin: return "join";
    case OpKind::kDepart: return "depart";
    case OpKind::kHeal: return "heal";
    case OpKind::kMaintenance: return "maintenance";
  }
  return "?";
}

const char* to_string(RoutingMode mode) {
  return mode == RoutingMode::kTable ? "table" : "hypernode";
}

RoutingMode parse_routing_mode(const std::string& s) {
  if (s == "table") return RoutingMode::kTable;
  if (s == "hypernode") return RoutingMode::kHypernode;
  throw std::invalid_argument("unknown routing mode '" + s + "'");
}

const char* to_string(MsgKind kind) {
  switch (kind) {
    case MsgKind::kProbe: return "probe";
    case MsgKind::kProbeBounce: return "probe_bounce";
    case MsgKind::kSearchMove: return "search_move";
    case MsgKind::kBucketWalk: return "bucket_walk";
    case MsgKind::kRangeForward: return "range_forward";
    case MsgKind::kReply: return "reply";
    case MsgKind::kWeightReport: return "weight_report";
    case MsgKind::kCountSweep: return "count_sweep";
    case MsgKind::kTokenPass: return "token_pass";
    case MsgKind::kElementTransfer: return "element_transfer";
    case MsgKind::kLinkUpdate: return "link_update";
    case MsgKind::kTableCopy: return "table_copy";
    case MsgKind::kJoinRequest: return "join_request";
    case MsgKind::kDepartNotice: return "depart_notice";
    case MsgKind::kHealProbe: return "heal_probe";
    case MsgKind::kNodeTransfer: return "node_transfer";
  }
  return "?";
}

bool is_search_kind(MsgKind kind) {
  return kind == MsgKind::kProbe || kind == MsgKind::kProbeBounce ||
         kind == MsgKind::kSearchMove || kind == MsgKind::kBucketWalk;
}

Message::Message(NodeId s, NodeId d, OpTag t, MsgKind k,
                 std::initializer_list<std::uint64_t> words)
    : src(s), dst(d), tag(t), kind(k) {
  if (words.size() > kMaxPayload) {
    throw std::logic_error("message payload exceeds constant bound");
  }
  std::copy(words.begin(), words.end(), payload.begin());
  payload_size = static_cast<std::uint8_t>(words.size());
}

namespace {

std::uint64_t sum(const std::vector<std::uint64_t>& v) {
  return std::accumulate(v.begin(), v.end(), std::uint64_t{0});
}

void bump(std::vector<std::uint64_t>& v, NodeId id, std::uint64_t by = 1) {
  if (v.size() <= id.value) v.resize(id.value + 1, 0);
  v[id.value] += by;
}

}  // namespace

std::uint64_t NetworkStats::total_sends() const { return sum(sends); }
std::uint64_t NetworkStats::total_receives() const { return sum(receives); }
std::uint64_t NetworkStats::total_bounced() const { return sum(bounced); }

SimNet::SimNet(std::uint64_t seed) : rng_(seed) {}

NodeId SimNet::add_node() {
  NodeId id{failed_.size()};
  failed_.push_back(false);
  return id;
}

void SimNet::count_send(const Message& msg) {
  bump(stats_.sends, msg.src);
  ++stats_.per_op[msg.tag.seq];
  ++stats_.per_op_kind[msg.tag.kind];
  ++stats_.per_msg_kind[msg.kind];
}

void SimNet::send(const Message& msg) {
  if (finalized_) throw std::logic_error("send after finalize");
  if (!is_known(msg.src) || !is_known(msg.dst)) {
    throw std::logic_error("send between unknown nodes");
  }
  if (failed_[msg.src.value]) {
    throw std::logic_error("send from failed node " +
                           std::to_string(msg.src.value));
  }
  count_send(msg);
  auto key = std::make_pair(msg.src.value, msg.dst.value);
  auto& q = queues_[key];
  if (q.empty()) active_.push_back(key);
  q.push_back(msg);
  ++in_flight_;
}

std::vector<Message> SimNet::run_to_quiescence() {
  std::vector<Message> bounces;
  while (!active_.empty()) {
    std::size_t pick = 0;
    if (active_.size() > 1) {
      pick = std::uniform_int_distribution<std::size_t>(
          0, active_.size() - 1)(rng_);
    }
    auto key = active_[pick];
    auto it = queues_.find(key);
    Message msg = it->second.front();
    it->second.pop_front();
    if (it->second.empty()) {
      queues_.erase(it);
      active_[pick] = active_.back();
      active_.pop_back();
    }
    --in_flight_;
    if (failed_[msg.dst.value]) {
      bump(stats_.bounced, msg.src);
      bounces.push_back(msg);
      continue;
    }
    bump(stats_.receives, msg.dst);
    if (is_search_kind(msg.kind)) bump(stats_.accesses, msg.dst);
    if (handler_) handler_(msg);
  }
  return bounces;
}

void SimNet::hop(NodeId src, NodeId dst, OpTag tag, MsgKind kind,
                 std::initializer_list<std::uint64_t> words) {
  send(Message(src, dst, tag, kind, words));
  auto bounces = run_to_quiescence();
  if (!bounces.empty()) throw Unreachable(src, bounces.front().dst);
}

void SimNet::bulk(NodeId src, NodeId dst, OpTag tag, MsgKind kind,
                  std::uint64_t count) {
  if (count == 0) return;
  if (in_flight_ > 0) run_to_quiescence();
  if (failed_.at(src.value)) throw std::logic_error("send from failed node");
  // A single FIFO channel with nothing else in flight: account directly.
  Message msg(src, dst, tag, kind);
  bump(stats_.sends, src, count);
  stats_.per_op[tag.seq] += count;
  stats_.per_op_kind[tag.kind] += count;
  stats_.per_msg_kind[kind] += count;
  if (failed_.at(dst.value)) {
    bump(stats_.bounced, src, count);
    throw Unreachable(src, dst);
  }
  bump(stats_.receives, dst, count);
  if (is_search_kind(kind)) bump(stats_.accesses, dst, count);
  if (handler_) {
    for (std::uint64_t i = 0; i < count; ++i) handler_(msg);
  }
}

void SimNet::fail_node(NodeId v) {
  if (!is_known(v)) throw std::invalid_argument("fail of unknown node");
  if (failed_[v.value]) {
    ++stats_.duplicate_failures;
    return;
  }
  failed_[v.value] = true;
}

bool SimNet::is_failed(NodeId v) const {
  return is_known(v) && failed_[v.value];
}

NetworkStats SimNet::snapshot_stats() const { return stats_; }

void SimNet::reset_stats() { stats_ = NetworkStats{}; }

}  // namespace d2
