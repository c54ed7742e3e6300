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

#ifndef D2TREE_TYPES_HPP_
#define D2TREE_TYPES_HPP_

#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>

namespace d2 {

/// Opaque node identifier. Identifiers are handed out sequentially by the
/// overlay and are never reused within a run, including for failed nodes.
struct NodeId {
  std::uint64_t value = std::numeric_limits<std::uint64_t>::max();

  constexpr NodeId() = default;
  constexpr explicit NodeId(std::uint64_t v) : value(v) {}

  constexpr bool valid() const {
    return value != std::numeric_limits<std::uint64_t>::max();
  }
  friend constexpr auto operator<=>(NodeId, NodeId) = default;
};

inline constexpr NodeId kNoNode{};

using Key = std::uint64_t;
using OptNode = std::optional<NodeId>;

/// High-level operations. Every message carries the kind and sequence number
/// of the operation that caused it so per-operation costs are exact.
enum class OpKind : std::uint8_t {
  kBuild,
  kSearch,
  kRange,
  kInsert,
  kDelete,
  kJoin,
  kDepart,
  kHeal,
  kMaintenance,
};

const char* to_string(OpKind kind);

struct OpTag {
  OpKind kind = OpKind::kMaintenance;
  std::uint64_t seq = 0;
};

enum class RoutingMode : std::uint8_t { kTable, kHypernode };

const char* to_string(RoutingMode mode);
RoutingMode parse_routing_mode(const std::string& s);

enum class Side : std::uint8_t { kLeft, kRight };

/// Where the owner of a key lies relative to a node, in expanded inorder
/// order.
enum class Direction : std::int8_t { kLeft = -1, kHere = 0, kRight = 1 };

/// Raised when a message cannot be delivered because its destination failed.
/// Operation drivers catch it, run healing and restart.
class Unreachable : public std::runtime_error {
 public:
  Unreachable(NodeId reporter, NodeId dead)
      : std::runtime_error("node " + std::to_string(dead.value) +
                           " unreachable from " +
                           std::to_string(reporter.value)),
        reporter_(reporter),
        dead_(dead) {}

  NodeId reporter() const { return reporter_; }
  NodeId dead() const { return dead_; }

 private:
  NodeId reporter_;
  NodeId dead_;
};

struct Config {
  RoutingMode mode = RoutingMode::kTable;
  /// Density criticality bound c of the brother-balance invariant, 1 < c <= 2.
  double c_crit = 2.0;
  /// Elements per transfer batch during migration.
  std::uint32_t batch = 1;
  std::uint64_t seed = 1;
  bool balance_elements = true;
  bool balance_nodes = true;

  void validate() const {
    if (!(c_crit > 1.0 && c_crit <= 2.0)) {
      throw std::invalid_argument("c_crit must lie in (1, 2]");
    }
    if (batch == 0) throw std::invalid_argument("batch must be >= 1");
  }
};

}  // namespace d2

#endif  // D2TREE_TYPES_HPP_
