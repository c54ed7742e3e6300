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

#ifndef D2TREE_SIMNET_HPP_
#define D2TREE_SIMNET_HPP_

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <random>
#include <utility>
#include <vector>

#include "d2tree/types.hpp"

namespace d2 {

enum class MsgKind : std::uint8_t {
  kProbe,           // horizontal search step
  kProbeBounce,     // overshooting probe returned to its sender
  kSearchMove,      // vertical search step (parent, child, inorder)
  kBucketWalk,      // step along a bucket list during search
  kRangeForward,    // range query forwarded to the inorder successor
  kReply,           // result or acknowledgement to the initiator
  kWeightReport,    // child reports a recomputed virtual counter
  kCountSweep,      // counting pass of a redistribution
  kTokenPass,       // dest token handed to the next node
  kElementTransfer, // one element moved between nodes
  kLinkUpdate,      // one link field rewritten at the receiver
  kTableCopy,       // one routing entry copied from a sibling
  kJoinRequest,
  kDepartNotice,
  kHealProbe,
  kNodeTransfer,    // bucket member moved to another bucket
};

const char* to_string(MsgKind kind);

/// True for message kinds that count as an access of the receiving node
/// for congestion purposes.
bool is_search_kind(MsgKind kind);

inline constexpr std::size_t kMaxPayload = 4;

/// Constant-size message. The payload holds at most kMaxPayload words
/// (keys, ids, counters); constructing a larger one is a logic error.
struct Message {
  NodeId src;
  NodeId dst;
  OpTag tag;
  MsgKind kind = MsgKind::kReply;
  std::array<std::uint64_t, kMaxPayload> payload{};
  std::uint8_t payload_size = 0;

  Message() = default;
  Message(NodeId s, NodeId d, OpTag t, MsgKind k,
          std::initializer_list<std::uint64_t> words = {});
};

struct NetworkStats {
  std::vector<std::uint64_t> sends;     // indexed by NodeId::value
  std::vector<std::uint64_t> receives;
  std::vector<std::uint64_t> accesses;
  std::vector<std::uint64_t> bounced;   // by sender
  std::map<std::uint64_t, std::uint64_t> per_op;  // op seq -> messages
  std::map<OpKind, std::uint64_t> per_op_kind;
  std::map<MsgKind, std::uint64_t> per_msg_kind;
  std::uint64_t duplicate_failures = 0;

  std::uint64_t total_sends() const;
  std::uint64_t total_receives() const;
  std::uint64_t total_bounced() const;
  bool operator==(const NetworkStats&) const = default;
};

/// Deterministic asynchronous network. Messages between one ordered pair of
/// nodes are delivered FIFO; the choice of which pair delivers next is drawn
/// from a seeded generator. There is no loss or duplication; the only fault
/// is a whole-node failure, after which deliveries to the node bounce back to
/// the sender as an unreachable notification.
class SimNet {
 public:
  using Handler = std::function<void(const Message&)>;

  explicit SimNet(std::uint64_t seed = 1);

  /// Allocates a fresh live node identifier.
  NodeId add_node();
  std::size_t node_count() const { return failed_.size(); }

  void set_handler(Handler h) { handler_ = std::move(h); }

  void send(const Message& msg);

  /// Delivers until no message is queued. Returns the bounced messages, in
  /// bounce order; each one is an unreachable notification to its sender.
  std::vector<Message> run_to_quiescence();

  /// Sends one message and delivers it. Throws Unreachable when the
  /// destination has failed.
  void hop(NodeId src, NodeId dst, OpTag tag, MsgKind kind,
           std::initializer_list<std::uint64_t> words = {});

  /// Sends `count` messages of one kind and delivers them.
  void bulk(NodeId src, NodeId dst, OpTag tag, MsgKind kind,
            std::uint64_t count);

  void fail_node(NodeId v);
  bool is_failed(NodeId v) const;
  bool is_known(NodeId v) const { return v.valid() && v.value < failed_.size(); }

  std::size_t in_flight() const { return in_flight_; }

  NetworkStats snapshot_stats() const;
  const NetworkStats& stats() const { return stats_; }
  void reset_stats();

  /// Forbids further sends; used once a run has been reported.
  void finalize() { finalized_ = true; }

 private:
  void count_send(const Message& msg);

  std::mt19937_64 rng_;
  std::vector<bool> failed_;
  std::map<std::pair<std::uint64_t, std::uint64_t>, std::deque<Message>> queues_;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> active_;
  std::size_t in_flight_ = 0;
  NetworkStats stats_;
  Handler handler_;
  bool finalized_ = false;
};

}  // namespace d2

#endif  // D2TREE_SIMNET_HPP_
