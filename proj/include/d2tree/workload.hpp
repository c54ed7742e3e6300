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


#ifndef D2TREE_WORKLOAD_HPP_
#define D2TREE_WORKLOAD_HPP_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "d2tree/types.hpp"

namespace d2 {

enum class OpType : std::uint8_t { kInsert, kDelete, kSearch, kRange, kJoin, kDepart, kFail };

const char* to_string(OpType t);
OpType parse_op_type(const std::string& s);

/// One workload line. `actor` absent means a node drawn at random when the
/// operation runs.
struct WorkloadOp {
  OpType type = OpType::kSearch;
  std::optional<Key> key;
  std::optional<Key> key2;  // range upper bound
  std::optional<NodeId> actor;

  bool operator==(const WorkloadOp&) const = default;
};

enum class KeyDistribution : std::uint8_t { kUniform, kHotspot, kAscending };

const char* to_string(KeyDistribution d);
KeyDistribution parse_key_distribution(const std::string& s);

/// Relative operation frequencies; they need not sum to one.
struct OpMix {
  double insert = 0.5;
  double erase = 0.2;
  double search = 0.2;
  double range = 0.1;
  double join = 0;
  double depart = 0;
  double fail = 0;
};

struct WorkloadSpec {
  KeyDistribution dist = KeyDistribution::kUniform;
  std::uint64_t ops = 0;
  Key key_space = Key{1} << 32;  // keys drawn from [0, key_space)
  // Hotspot keys fall in [hot_start, hot_start + hot_width). The default
  // sits off the key-space midpoint: the root has no brother, so a region
  // owned by the root never trips the density check.
  Key hot_start = Key{3} << 28;
  Key hot_width = 1024;
  Key range_width = Key{1} << 22;  // mean width of range queries
  OpMix mix;
};

/// Deterministic for a given spec and seed. Deletes pick a previously
/// inserted key when one exists, so most of them find their target.
std::vector<WorkloadOp> gen_workload(const WorkloadSpec& spec, std::uint64_t seed);

/// JSON-lines: one object per line with "op" and, as needed, "key",
/// "key2" and "actor" (a node id or "random").
void write_workload(std::ostream& out, const std::vector<WorkloadOp>& ops);
/// Throws std::invalid_argument naming the line for malformed input.
std::vector<WorkloadOp> read_workload(std::istream& in);

/// Seed of a named stream derived from the master seed.
std::uint64_t derive_seed(std::uint64_t master, const std::string& stream);

}  // namespace d2

#endif  // D2TREE_WORKLOAD_HPP_
