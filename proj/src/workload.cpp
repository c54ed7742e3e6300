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


#include "d2tree/workload.hpp"

#include <algorithm>
#include <array>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace d2 {

namespace {

constexpr std::array<const char*, 7> kOpNames = {"insert", "delete", "search", "range",
                                                 "join",   "depart", "fail"};
constexpr std::array<const char*, 3> kDistNames = {"uniform", "hotspot", "ascending"};

}  // namespace

const char* to_string(OpType t) { return kOpNames.at(static_cast<std::size_t>(t)); }

OpType parse_op_type(const std::string& s) {
  for (std::size_t i = 0; i < kOpNames.size(); ++i) {
    if (s == kOpNames[i]) return static_cast<OpType>(i);
  }
  throw std::invalid_argument("unknown operation '" + s + "'");
}

const char* to_string(KeyDistribution d) { return kDistNames.at(static_cast<std::size_t>(d)); }

KeyDistribution parse_key_distribution(const std::string& s) {
  for (std::size_t i = 0; i < kDistNames.size(); ++i) {
    if (s == kDistNames[i]) return static_cast<KeyDistribution>(i);
  }
  throw std::invalid_argument("unknown key distribution '" + s + "'");
}

std::uint64_t derive_seed(std::uint64_t master, const std::string& stream) {
  std::vector<std::uint32_t> words = {static_cast<std::uint32_t>(master),
                                      static_cast<std::uint32_t>(master >> 32)};
  for (unsigned char c : stream) words.push_back(c);
  std::seed_seq seq(words.begin(), words.end());
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (std::uint64_t{out[0]} << 32) | out[1];
}

std::vector<WorkloadOp> gen_workload(const WorkloadSpec& spec, std::uint64_t seed) {
  if (spec.key_space == 0) throw std::invalid_argument("key space must be non-empty");
  std::mt19937_64 rng(seed);
  const OpMix& m = spec.mix;
  std::discrete_distribution<int> pick_op(
      {m.insert, m.erase, m.search, m.range, m.join, m.depart, m.fail});
  std::uniform_int_distribution<Key> uniform(0, spec.key_space - 1);
  std::uniform_int_distribution<Key> hot(0, std::max<Key>(spec.hot_width, 1) - 1);
  std::exponential_distribution<double> width(1.0 / static_cast<double>(std::max<Key>(spec.range_width, 1)));
  Key next_ascending = 0;
  const Key ascending_step = std::max<Key>(1, spec.key_space / std::max<std::uint64_t>(spec.ops, 1));
  std::vector<Key> inserted;

  auto draw = [&]() -> Key {
    switch (spec.dist) {
      case KeyDistribution::kUniform:
        return uniform(rng);
      case KeyDistribution::kHotspot:
        return spec.hot_start + hot(rng);
      case KeyDistribution::kAscending: {
        const Key k = next_ascending;
        next_ascending += ascending_step;
        return k;
      }
    }
    return 0;
  };

  std::vector<WorkloadOp> out;
  out.reserve(spec.ops);
  for (std::uint64_t i = 0; i < spec.ops; ++i) {
    WorkloadOp op;
    op.type = static_cast<OpType>(pick_op(rng));
    switch (op.type) {
      case OpType::kInsert:
        op.key = draw();
        inserted.push_back(*op.key);
        break;
      case OpType::kDelete:
        if (!inserted.empty()) {
          std::uniform_int_distribution<std::size_t> at(0, inserted.size() - 1);
          const std::size_t j = at(rng);
          op.key = inserted[j];
          inserted[j] = inserted.back();
          inserted.pop_back();
        } else {
          op.key = draw();
        }
        break;
      case OpType::kSearch:
        op.key = draw();
        break;
      case OpType::kRange: {
        const Key a = draw();
        const auto w = static_cast<Key>(width(rng));
        op.key = a;
        op.key2 = a + std::min(w, ~Key{0} - a);
        break;
      }
      default:
        break;
    }
    out.push_back(op);
  }
  return out;
}

void write_workload(std::ostream& out, const std::vector<WorkloadOp>& ops) {
  for (const auto& op : ops) {
    nlohmann::ordered_json j;
    j["op"] = to_string(op.type);
    if (op.key) j["key"] = *op.key;
    if (op.key2) j["key2"] = *op.key2;
    if (op.actor) {
      j["actor"] = op.actor->value;
    } else {
      j["actor"] = "random";
    }
    out << j.dump() << '\n';
  }
}

std::vector<WorkloadOp> read_workload(std::istream& in) {
  std::vector<WorkloadOp> ops;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fail = [&](const std::string& why) {
      return std::invalid_argument("workload line " + std::to_string(n) + ": " + why);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw fail("not valid JSON");
    }
    if (!j.is_object() || !j.contains("op") || !j["op"].is_string()) throw fail("missing \"op\"");
    WorkloadOp op;
    try {
      op.type = parse_op_type(j["op"].get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw fail(e.what());
    }
    auto key_field = [&](const char* name) -> std::optional<Key> {
      if (!j.contains(name)) return std::nullopt;
      if (!j[name].is_number_unsigned()) throw fail(std::string("\"") + name + "\" must be an unsigned integer");
      return j[name].get<Key>();
    };
    op.key = key_field("key");
    op.key2 = key_field("key2");
    if (j.contains("actor")) {
      const auto& a = j["actor"];
      if (a.is_number_unsigned()) {
        op.actor = NodeId(a.get<std::uint64_t>());
      } else if (!(a.is_string() && a.get<std::string>() == "random")) {
        throw fail("\"actor\" must be a node id or \"random\"");
      }
    }
    const bool keyed = op.type == OpType::kInsert || op.type == OpType::kDelete ||
                       op.type == OpType::kSearch || op.type == OpType::kRange;
    if (keyed && !op.key) throw fail("missing \"key\"");
    if (op.type == OpType::kRange) {
      if (!op.key2) throw fail("range needs \"key2\"");
      if (*op.key > *op.key2) throw fail("range with key > key2");
    } else if (op.key2) {
      throw fail("\"key2\" only applies to range");
    }
    if (!keyed && op.key) throw fail("\"key\" does not apply to " + std::string(to_string(op.type)));
    ops.push_back(op);
  }
  return ops;
}

}  // namespace d2
