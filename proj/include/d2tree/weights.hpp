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

#ifndef D2TREE_WEIGHTS_HPP_
#define D2TREE_WEIGHTS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "d2tree/overlay.hpp"

namespace d2 {

/// Exact fraction with a positive denominator, kept in lowest terms.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  Rational() = default;
  Rational(std::int64_t n, std::int64_t d);
  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Rational&) const = default;
  friend Rational operator*(const Rational& a, const Rational& b);
  friend Rational operator-(const Rational& a, const Rational& b);
  friend Rational operator+(const Rational& a, const Rational& b);
  friend bool operator<(const Rational& a, const Rational& b);
};

/// Slack 1/j^2 for index j >= 1.
Rational epsilon(std::uint32_t j);
/// prod_{j=2..h} (1 - 1/j^2), which equals (h+1)/(2h).
Rational epsilon_product(std::uint32_t h);

/// Slack index used by a PBT node of height h >= 1. The node of height h
/// uses epsilon(h + 1): with 1/1^2 = 1 at height 1 the lower invariant is
/// vacuous and the factor-2 bound on b would not hold.
inline std::uint32_t slack_index(std::uint32_t height) { return height + 1; }

enum class Counter : std::uint8_t { kWeight, kSize };

std::int64_t& counter_ref(OverlayNode& n, Counter c);
std::int64_t counter_of(const OverlayNode& n, Counter c);
std::int64_t local_of(const Overlay& ov, NodeId v, Counter c);

/// Exact subtree aggregate by recursive recount (elements or nodes).
std::int64_t true_aggregate(const Overlay& ov, NodeId v, Counter c);
inline std::int64_t true_weight(const Overlay& ov, NodeId v) {
  return true_aggregate(ov, v, Counter::kWeight);
}
inline std::int64_t true_size(const Overlay& ov, NodeId v) {
  return true_aggregate(ov, v, Counter::kSize);
}

/// Sum of the children's virtual counters (0 for leaves).
std::int64_t children_sum(const Overlay& ov, NodeId v, Counter c);

/// Both lazy invariants at v, compared exactly:
///   e + (1 - eps) S < b < e + (1 + eps) S, or b == e + S.
/// Leaves must be exact.
bool invariant_holds(const Overlay& ov, NodeId v, Counter c);

/// Propagates a change of the exact local count at u (already applied to
/// the stores) towards the root. Walks up recomputing every node whose
/// invariants fail and stops at the first ancestor where they hold.
/// Returns the recomputed internal nodes, bottom-up.
std::vector<NodeId> on_local_update(Overlay& ov, NodeId u, Counter c, OpTag tag,
                                    std::int64_t delta = 1);

/// Continues a propagation above v after v's counter was set directly.
std::vector<NodeId> propagate_from(Overlay& ov, NodeId v, Counter c, OpTag tag);

/// Sets the counters of v's whole subtree to their exact values.
void recompute_subtree_exact(Overlay& ov, NodeId v, Counter c);

/// The lazy slack bounds at every internal node and the factor-2 bound against the
/// recount at every PBT node, for both counters. One line per violation.
std::vector<std::string> validate_weights(const Overlay& ov);

}  // namespace d2

#endif  // D2TREE_WEIGHTS_HPP_
