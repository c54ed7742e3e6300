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


#include "d2tree/harness.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "d2tree/balance.hpp"
#include "d2tree/index.hpp"
#include "d2tree/membership.hpp"
#include "d2tree/weights.hpp"

namespace d2 {

namespace {

using nlohmann::json;

std::uint64_t op_messages(const Overlay& ov, OpTag tag) {
  const auto& per_op = ov.net().stats().per_op;
  auto it = per_op.find(tag.seq);
  return it == per_op.end() ? 0 : it->second;
}

std::vector<NodeId> usable_nodes(const Overlay& ov) {
  std::vector<NodeId> out;
  for (const auto& n : ov.all_nodes()) {
    if (n.live && !ov.net().is_failed(n.id)) out.push_back(n.id);
  }
  return out;
}

void add_detail(std::vector<std::string>& details, std::size_t cap, std::string s) {
  if (details.size() < cap) details.push_back(std::move(s));
}

// Removes lost elements from the ledger; false if one was not there.
bool drop_lost(std::multiset<Key>& ledger, const std::vector<Key>& lost) {
  bool ok = true;
  for (Key k : lost) {
    auto it = ledger.find(k);
    if (it == ledger.end()) {
      ok = false;
    } else {
      ledger.erase(it);
    }
  }
  return ok;
}

std::size_t expected_nodes(std::uint32_t levels, std::uint32_t bucket) {
  return ((std::size_t{1} << levels) - 1) + (std::size_t{1} << (levels - 1)) * bucket;
}

json counters_json(const OverlayCounters& k) {
  return {{"weight_recomputations", k.weight_recomputations},
          {"size_recomputations", k.size_recomputations},
          {"element_redistributions", k.element_redistributions},
          {"node_redistributions", k.node_redistributions},
          {"elements_migrated", k.elements_migrated},
          {"nodes_migrated", k.nodes_migrated},
          {"extensions", k.extensions},
          {"contractions", k.contractions},
          {"forced_contractions", k.forced_contractions},
          {"heals", k.heals},
          {"elements_lost", k.elements_lost},
          {"recompute_gaps", k.recompute_gaps},
          {"recompute_gaps_short", k.recompute_gaps_short},
          {"worst_gap_fraction", k.worst_gap_fraction},
          {"retriggers", k.retriggers},
          {"retriggers_short", k.retriggers_short},
          {"element_spread_violations", k.element_spread_violations},
          {"bucket_spread_violations", k.bucket_spread_violations}};
}

double ratio(double a, double b) { return b == 0 ? 0 : a / b; }

// Structural events must each follow a doubling (extension) or halving
// (contraction) of the node count since the previous one.
std::uint64_t structural_guard_violations(const Overlay& ov, std::vector<std::string>& details) {
  std::uint64_t bad = 0;
  std::uint64_t last = 0;
  for (const auto& e : ov.events()) {
    const bool ext = e.kind == "extended";
    if (!ext && e.kind != "contracted") continue;
    const bool forced = e.detail.find("forced") != std::string::npos;
    if (last != 0 && !forced) {
      const bool ok = ext ? e.node_count >= 2 * last : 2 * e.node_count <= last;
      if (!ok) {
        ++bad;
        add_detail(details, 8,
                   e.kind + " at " + std::to_string(e.node_count) + " nodes, previous at " +
                       std::to_string(last));
      }
    }
    last = e.node_count;
  }
  return bad;
}

}  // namespace

std::string MetricsReport::to_json() const {
  json j;
  j["suite"] = suite;
  j["seed"] = seed;
  j["summary"] = summary;
  return j.dump(2) + "\n";
}

std::string MetricsReport::to_csv() const {
  std::ostringstream out;
  out << "# suite=" << suite << " seed=" << seed << "\n";
  out << "seq,kind,actor,messages,restarts,result\n";
  for (const auto& r : ops) {
    out << r.seq << ',' << r.kind << ',' << r.actor << ',' << r.messages << ',' << r.restarts
        << ',' << r.result << '\n';
  }
  return out.str();
}

std::string MetricsReport::render(const std::string& format) const {
  if (format == "json") return to_json();
  if (format == "csv") return to_csv();
  throw std::invalid_argument("unknown format '" + format + "'");
}

std::vector<Key> flatten(const Overlay& ov) {
  std::vector<Key> out;
  for (NodeId x : ov.expanded_order()) {
    const auto& s = ov.node(x).store;
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

json overlay_summary(const Overlay& ov) {
  std::size_t max_load = 0, min_load = SIZE_MAX;
  std::size_t max_bucket = 0, min_bucket = SIZE_MAX;
  for (NodeId x : ov.expanded_order()) {
    const auto& n = ov.node(x);
    max_load = std::max(max_load, n.store.size());
    min_load = std::min(min_load, n.store.size());
    if (n.role == Role::kLeaf) {
      max_bucket = std::max(max_bucket, n.bucket.size());
      min_bucket = std::min(min_bucket, n.bucket.size());
    }
  }
  json per_kind = json::object();
  for (auto [k, v] : ov.net().stats().per_msg_kind) per_kind[to_string(k)] = v;
  return {{"nodes", ov.live_count()},
          {"pbt_nodes", ov.pbt_count()},
          {"height", ov.height()},
          {"mode", to_string(ov.config().mode)},
          {"elements", ov.total_elements()},
          {"load_max", max_load},
          {"load_min", min_load},
          {"load_spread", max_load - min_load},
          {"bucket_max", max_bucket},
          {"bucket_min", min_bucket},
          {"bucket_spread", max_bucket - min_bucket},
          {"counters", counters_json(ov.counters())},
          {"messages", ov.net().stats().total_sends()},
          {"messages_by_kind", per_kind}};
}

Overlay make_overlay(const BuildParams& p, std::uint64_t seed) {
  Config c = p.config;
  c.seed = seed;
  c.validate();
  Overlay ov = Overlay::build_initial(p.pbt_levels, p.bucket_size, c);
  if (p.elements > 0) {
    std::mt19937_64 rng(derive_seed(seed, "preload"));
    std::uniform_int_distribution<Key> key(0, p.key_space - 1);
    std::vector<Key> keys(p.elements);
    for (auto& k : keys) k = key(rng);
    std::sort(keys.begin(), keys.end());
    const auto order = ov.expanded_order();
    const std::size_t m = order.size();
    std::size_t at = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t take = keys.size() / m + (i < keys.size() % m ? 1 : 0);
      ov.store_assign(order[i], std::vector<Key>(keys.begin() + static_cast<std::ptrdiff_t>(at),
                                                 keys.begin() + static_cast<std::ptrdiff_t>(at + take)));
      at += take;
    }
    recompute_subtree_exact(ov, ov.root(), Counter::kWeight);
  }
  return ov;
}

std::vector<Verdict> oracle_suite(const Overlay& ov, const std::multiset<Key>* ledger,
                                  std::size_t ownership_probes) {
  std::vector<Verdict> out;
  auto add = [&](std::string name, std::vector<std::string> details) {
    Verdict v;
    v.name = std::move(name);
    v.pass = details.empty();
    v.details = std::move(details);
    out.push_back(std::move(v));
  };
  add("topology", ov.validate_topology());
  add("weights", validate_weights(ov));
  add("density", validate_balance(ov));
  add("node_criticality", validate_membership(ov));
  add("order", validate_order(ov));

  std::vector<std::string> own;
  {
    const auto flat = flatten(ov);
    std::vector<Key> probes;
    const std::size_t stride = std::max<std::size_t>(1, flat.size() * 3 / std::max<std::size_t>(ownership_probes, 1));
    for (std::size_t i = 0; i < flat.size(); i += stride) {
      probes.push_back(flat[i]);
      probes.push_back(flat[i] + 1);
      if (flat[i] > 0) probes.push_back(flat[i] - 1);
    }
    probes.push_back(0);
    probes.push_back(~Key{0});
    const auto& order = ov.expanded_order();
    for (Key a : probes) {
      std::size_t here = 0;
      NodeId found;
      for (NodeId x : order) {
        if (ov.classify(x, a) == Direction::kHere) {
          ++here;
          found = x;
        }
      }
      if (here != 1) {
        own.push_back("key " + std::to_string(a) + " has " + std::to_string(here) + " owners");
      } else if (found != owner_by_scan(ov, a)) {
        own.push_back("key " + std::to_string(a) + " owned by node " + std::to_string(found.value) +
                      " instead of " + std::to_string(owner_by_scan(ov, a).value));
      }
      if (own.size() >= 8) break;
    }
  }
  add("ownership", std::move(own));

  if (ledger) {
    std::vector<std::string> led;
    const auto flat = flatten(ov);
    if (!std::equal(flat.begin(), flat.end(), ledger->begin(), ledger->end())) {
      led.push_back("stored elements (" + std::to_string(flat.size()) +
                    ") differ from the ledger (" + std::to_string(ledger->size()) + ")");
    }
    add("ledger", std::move(led));
  }
  return out;
}

bool all_pass(const std::vector<Verdict>& v) {
  return std::all_of(v.begin(), v.end(), [](const Verdict& x) { return x.pass; });
}

json to_json(const std::vector<Verdict>& v) {
  json j = json::object();
  for (const auto& x : v) j[x.name] = {{"pass", x.pass}, {"details", x.details}};
  return j;
}

std::vector<Key> heal_pending(Overlay& ov, OpTag tag) {
  std::vector<Key> lost;
  std::vector<NodeId> stack;
  for (std::size_t guard = 0;; ++guard) {
    if (guard > 4 * ov.all_nodes().size() + 16) throw std::runtime_error("healing did not finish");
    if (stack.empty()) {
      for (const auto& n : ov.all_nodes()) {
        if (n.live && ov.net().is_failed(n.id)) {
          stack.push_back(n.id);
          break;
        }
      }
      if (stack.empty()) return lost;
    }
    const NodeId dead = stack.back();
    if (!ov.node(dead).live) {
      stack.pop_back();
      continue;
    }
    const Links& L = ov.node(dead).links;
    std::optional<NodeId> reporter;
    for (const OptNode& c : {L.parent, L.left_child, L.right_child, L.inorder_prev,
                             L.inorder_next, L.bucket_rep, L.bucket_prev, L.bucket_next,
                             L.bucket_head}) {
      if (c && ov.is_live(*c) && !ov.net().is_failed(*c)) {
        reporter = c;
        break;
      }
    }
    if (!reporter) {
      auto all = usable_nodes(ov);
      if (all.empty()) throw std::runtime_error("no live node left to heal a failure");
      reporter = all.front();
    }
    try {
      auto gone = heal_failure(ov, *reporter, dead, tag);
      lost.insert(lost.end(), gone.begin(), gone.end());
      stack.pop_back();
    } catch (const Unreachable& e) {
      stack.push_back(e.dead());
    }
  }
}

RunResult run_workload(Overlay& ov, const std::vector<WorkloadOp>& ops, std::uint64_t seed,
                       const RunOptions& opts) {
  RunResult res;
  res.report.suite = "run";
  res.report.seed = seed;
  for (Key k : flatten(ov)) res.ledger.insert(k);
  std::mt19937_64 rng(derive_seed(seed, "actors"));
  std::vector<NodeId> nodes = usable_nodes(ov);
  bool nodes_dirty = false;
  std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> by_kind;  // count, messages
  auto mismatch = [&](std::string s) {
    ++res.mismatches;
    add_detail(res.details, opts.max_details, std::move(s));
  };

  for (std::size_t i = 0; i < ops.size(); ++i) {
    const WorkloadOp& op = ops[i];
    if (nodes_dirty) {
      nodes = usable_nodes(ov);
      nodes_dirty = false;
    }
    if (nodes.empty()) throw std::runtime_error("no live node left");
    NodeId actor;
    if (op.actor) {
      actor = *op.actor;
      if (!ov.net().is_known(actor) || !ov.is_live(actor) || ov.net().is_failed(actor)) {
        throw std::invalid_argument("workload op " + std::to_string(i + 1) + ": actor " +
                                    std::to_string(actor.value) + " is not a live node");
      }
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, nodes.size() - 1);
      actor = nodes[pick(rng)];
    }
    OpRecord rec;
    rec.kind = to_string(op.type);
    rec.actor = static_cast<std::int64_t>(actor.value);
    OpTag tag;
    std::vector<Key> lost;
    std::uint32_t restarts = 0;
    const std::string where = "op " + std::to_string(i + 1) + " (" + rec.kind + ")";
    switch (op.type) {
      case OpType::kInsert: {
        tag = ov.next_op(OpKind::kInsert);
        auto r = insert(ov, actor, *op.key, tag);
        res.ledger.insert(*op.key);
        lost = r.lost;
        restarts = r.restarts;
        rec.result = static_cast<std::int64_t>(r.owner.value);
        break;
      }
      case OpType::kDelete: {
        tag = ov.next_op(OpKind::kDelete);
        auto r = erase(ov, actor, *op.key, tag);
        lost = r.lost;
        restarts = r.restarts;
        if (!drop_lost(res.ledger, lost)) mismatch(where + ": lost element missing from ledger");
        lost.clear();
        auto it = res.ledger.find(*op.key);
        if ((it != res.ledger.end()) != r.found) mismatch(where + ": presence differs for key " + std::to_string(*op.key));
        if (r.found && it != res.ledger.end()) res.ledger.erase(it);
        rec.result = r.found;
        break;
      }
      case OpType::kSearch: {
        tag = ov.next_op(OpKind::kSearch);
        auto r = search(ov, actor, *op.key, tag);
        lost = r.lost;
        restarts = r.restarts;
        if (!drop_lost(res.ledger, lost)) mismatch(where + ": lost element missing from ledger");
        lost.clear();
        const auto& s = ov.node(r.owner).store;
        const bool found = std::binary_search(s.begin(), s.end(), *op.key);
        if (found != (res.ledger.count(*op.key) > 0)) mismatch(where + ": presence differs for key " + std::to_string(*op.key));
        rec.result = static_cast<std::int64_t>(r.owner.value);
        break;
      }
      case OpType::kRange: {
        tag = ov.next_op(OpKind::kRange);
        auto r = range_query(ov, actor, *op.key, *op.key2, tag);
        lost = r.lost;
        restarts = r.restarts;
        if (!drop_lost(res.ledger, lost)) mismatch(where + ": lost element missing from ledger");
        lost.clear();
        const std::vector<Key> expect(res.ledger.lower_bound(*op.key),
                                      res.ledger.upper_bound(*op.key2));
        if (r.keys != expect) mismatch(where + ": range answer differs");
        rec.result = static_cast<std::int64_t>(r.keys.size());
        break;
      }
      case OpType::kJoin: {
        tag = ov.next_op(OpKind::kJoin);
        lost = heal_pending(ov, tag);
        if (!ov.is_live(actor) || ov.net().is_failed(actor)) actor = usable_nodes(ov).front();
        rec.result = static_cast<std::int64_t>(join(ov, actor, tag).value);
        nodes_dirty = true;
        break;
      }
      case OpType::kDepart: {
        tag = ov.next_op(OpKind::kDepart);
        lost = heal_pending(ov, tag);
        nodes_dirty = true;
        if (!ov.is_live(actor) || ov.live_count() <= 1) {
          rec.result = 0;
          break;
        }
        depart(ov, actor, tag);
        rec.result = 1;
        break;
      }
      case OpType::kFail: {
        tag = ov.next_op(OpKind::kMaintenance);
        if (nodes.size() > 1) {
          ov.net().fail_node(actor);
          rec.result = 1;
        } else {
          rec.result = 0;
        }
        nodes_dirty = true;
        break;
      }
    }
    if (!drop_lost(res.ledger, lost)) mismatch(where + ": lost element missing from ledger");
    if (restarts > 0) nodes_dirty = true;
    rec.seq = tag.seq;
    rec.restarts = restarts;
    rec.messages = op_messages(ov, tag);
    auto& bk = by_kind[rec.kind];
    ++bk.first;
    bk.second += rec.messages;
    if (opts.record_ops) res.report.ops.push_back(rec);
    if (opts.validate_every > 0 && (i + 1) % opts.validate_every == 0) {
      auto v = oracle_suite(ov, &res.ledger, 64);
      if (!all_pass(v)) {
        ++res.validation_failures;
        for (const auto& x : v) {
          if (!x.pass) add_detail(res.details, opts.max_details, where + ": " + x.name + ": " + x.details.front());
        }
      }
    }
  }
  auto final_verdicts = oracle_suite(ov, &res.ledger);
  if (!all_pass(final_verdicts)) ++res.validation_failures;
  json kinds = json::object();
  for (const auto& [k, v] : by_kind) {
    kinds[k] = {{"count", v.first}, {"messages", v.second},
                {"mean_messages", ratio(static_cast<double>(v.second), static_cast<double>(v.first))}};
  }
  res.report.summary = {{"ops", ops.size()},
                        {"mismatches", res.mismatches},
                        {"validation_failures", res.validation_failures},
                        {"details", res.details},
                        {"by_kind", kinds},
                        {"overlay", overlay_summary(ov)},
                        {"verdicts", to_json(final_verdicts)}};
  return res;
}

MetricsReport congestion_experiment(const BuildParams& p, std::uint32_t seeds,
                                    std::uint64_t master) {
  MetricsReport rep;
  rep.suite = "congestion";
  rep.seed = master;
  BuildParams bp = p;
  bp.config.balance_elements = false;
  bp.config.balance_nodes = false;
  const std::size_t n_nodes = expected_nodes(p.pbt_levels, p.bucket_size);
  if (bp.elements == 0) bp.elements = 4 * n_nodes;
  const double log_n = std::log2(static_cast<double>(n_nodes));
  json per_seed = json::array();
  std::uint64_t worst = 0, worst_search = 0, total_messages = 0;
  double ratio_sum = 0, ratio_max = 0;
  json histogram;
  for (std::uint32_t s = 0; s < seeds; ++s) {
    const std::uint64_t seed = derive_seed(master, "congestion/" + std::to_string(s));
    Overlay ov = make_overlay(bp, seed);
    std::mt19937_64 rng(derive_seed(seed, "targets"));
    const auto order = ov.expanded_order();
    std::uniform_int_distribution<std::size_t> pick(0, order.size() - 1);
    std::uint64_t seed_messages = 0;
    for (NodeId start : order) {
      const NodeId target = order[pick(rng)];
      const auto& keys = ov.node(target).store;
      std::uniform_int_distribution<std::size_t> which(0, keys.size() - 1);
      auto r = search(ov, start, keys[which(rng)], ov.next_op(OpKind::kSearch));
      worst_search = std::max(worst_search, r.messages);
      seed_messages += r.messages;
    }
    const auto& acc = ov.net().stats().accesses;
    std::uint64_t mx = 0, sum = 0;
    std::vector<std::uint64_t> hist;
    for (NodeId x : order) {
      const std::uint64_t a = x.value < acc.size() ? acc[x.value] : 0;
      mx = std::max(mx, a);
      sum += a;
      hist.push_back(a);
    }
    const double mean = static_cast<double>(sum) / static_cast<double>(order.size());
    const double r = ratio(static_cast<double>(mx), mean);
    worst = std::max(worst, mx);
    ratio_sum += r;
    ratio_max = std::max(ratio_max, r);
    total_messages += seed_messages;
    if (s == 0) histogram = hist;
    per_seed.push_back({{"seed", seed}, {"max_accesses", mx}, {"mean_accesses", mean},
                        {"max_over_mean", r}, {"messages", seed_messages}});
  }
  const double guard = 12 * log_n;
  rep.summary = {{"mode", to_string(p.config.mode)},
                 {"pbt_levels", p.pbt_levels},
                 {"bucket_size", p.bucket_size},
                 {"nodes", n_nodes},
                 {"log2_nodes", log_n},
                 {"seeds", seeds},
                 {"searches_per_seed", n_nodes},
                 {"max_accesses", worst},
                 {"mean_max_over_mean", seeds ? ratio_sum / seeds : 0.0},
                 {"max_max_over_mean", ratio_max},
                 {"congestion", ratio(static_cast<double>(worst), static_cast<double>(n_nodes))},
                 {"max_search_messages", worst_search},
                 {"mean_search_messages",
                  ratio(static_cast<double>(total_messages), static_cast<double>(n_nodes) * seeds)},
                 {"guard", guard},
                 {"within_guard", static_cast<double>(worst) <= guard},
                 {"accesses_first_seed", histogram},
                 {"per_seed", per_seed}};
  return rep;
}

MetricsReport weights_experiment(const std::vector<std::uint32_t>& levels, std::uint64_t inserts,
                                 RoutingMode mode, std::uint64_t master) {
  MetricsReport rep;
  rep.suite = "amortized_weights";
  rep.seed = master;
  json runs = json::array();
  double first_ratio = 0, last_ratio = 0, first_total = 0, last_total = 0, max_total_ratio = 0;
  double worst_gap = -1;
  std::uint64_t short_gaps = 0, gaps = 0, violations = 0;
  for (std::size_t li = 0; li < levels.size(); ++li) {
    const std::uint32_t L = levels[li];
    BuildParams bp;
    bp.pbt_levels = L;
    bp.bucket_size = 1;
    bp.config.mode = mode;
    bp.config.balance_elements = false;
    bp.config.balance_nodes = false;
    // Smallest even load giving every height-i subtree at least i^4 elements.
    std::uint64_t per_node = 1;
    for (std::uint32_t i = 1; i < L; ++i) {
      const std::uint64_t sub = expected_nodes(i + 1, 1);
      const std::uint64_t need = std::uint64_t{i} * i * i * i;
      per_node = std::max(per_node, (need + sub - 1) / sub);
    }
    const std::size_t n_nodes = expected_nodes(L, 1);
    bp.elements = per_node * n_nodes;
    const std::uint64_t seed = derive_seed(master, "weights/" + std::to_string(L));
    Overlay ov = make_overlay(bp, seed);
    std::int64_t preload_slack = INT64_MAX;
    for (std::uint32_t l = 0; l < L; ++l) {
      const std::int64_t h = L - 1 - l;
      for (NodeId v : ov.level(l)) {
        preload_slack = std::min(preload_slack, true_weight(ov, v) - h * h * h * h);
      }
    }
    const OverlayCounters before = ov.counters();
    std::mt19937_64 rng(derive_seed(seed, "inserts"));
    std::uniform_int_distribution<Key> key(0, bp.key_space - 1);
    auto nodes = usable_nodes(ov);
    std::uniform_int_distribution<std::size_t> pick(0, nodes.size() - 1);
    std::uint64_t run_violations = 0;
    const std::uint64_t sample = std::max<std::uint64_t>(1, inserts / 20);
    for (std::uint64_t i = 0; i < inserts; ++i) {
      insert(ov, nodes[pick(rng)], key(rng), ov.next_op(OpKind::kInsert));
      if ((i + 1) % sample == 0 && !validate_weights(ov).empty()) ++run_violations;
    }
    const auto& k = ov.counters();
    const std::uint64_t recomputed = k.weight_recomputations - before.weight_recomputations;
    const double internal_ratio = ratio(static_cast<double>(recomputed), static_cast<double>(inserts));
    // Every insert also rewrites its leaf's exact counter.
    const double total_ratio = internal_ratio + 1.0;
    if (li == 0) {
      first_ratio = internal_ratio;
      first_total = total_ratio;
    }
    last_ratio = internal_ratio;
    last_total = total_ratio;
    if (k.worst_gap_fraction >= 0 && (worst_gap < 0 || k.worst_gap_fraction < worst_gap)) {
      worst_gap = k.worst_gap_fraction;
    }
    max_total_ratio = std::max(max_total_ratio, total_ratio);
    gaps += k.recompute_gaps - before.recompute_gaps;
    short_gaps += k.recompute_gaps_short - before.recompute_gaps_short;
    violations += run_violations;
    runs.push_back({{"pbt_levels", L},
                    {"pbt_nodes", ov.pbt_count()},
                    {"nodes", n_nodes},
                    {"preload_per_node", per_node},
                    {"preload_min_slack", preload_slack},
                    {"inserts", inserts},
                    {"internal_recomputations", recomputed},
                    {"internal_per_insert", internal_ratio},
                    {"recomputed_nodes_per_insert", total_ratio},
                    {"recompute_gaps", k.recompute_gaps - before.recompute_gaps},
                    {"recompute_gaps_short", k.recompute_gaps_short - before.recompute_gaps_short},
                    {"sampled_weight_violations", run_violations},
                    {"final_weight_violations", validate_weights(ov).size()}});
  }
  rep.summary = {{"mode", to_string(mode)},
                 {"runs", runs},
                 {"max_recomputed_per_insert", max_total_ratio},
                 {"growth", ratio(last_total, first_total)},
                 {"growth_internal", ratio(last_ratio, first_ratio)},
                 {"worst_gap_fraction", worst_gap},
                 {"recompute_gaps", gaps},
                 {"recompute_gaps_short", short_gaps},
                 {"sampled_weight_violations", violations}};
  return rep;
}

MetricsReport balance_experiment(const BuildParams& p, std::uint64_t ops, KeyDistribution dist,
                                 std::uint64_t master) {
  MetricsReport rep;
  rep.suite = std::string("amortized_balance_") + to_string(dist);
  rep.seed = master;
  BuildParams bp = p;
  const std::size_t n_nodes = expected_nodes(p.pbt_levels, p.bucket_size);
  if (bp.elements == 0) bp.elements = n_nodes;
  const std::uint64_t seed = derive_seed(master, rep.suite);
  Overlay ov = make_overlay(bp, seed);
  WorkloadSpec spec;
  spec.dist = dist;
  spec.ops = ops;
  spec.key_space = bp.key_space;
  spec.mix = dist == KeyDistribution::kHotspot ? OpMix{1, 0, 0, 0, 0, 0, 0}
                                                : OpMix{0.75, 0.25, 0, 0, 0, 0, 0};
  const auto work = gen_workload(spec, derive_seed(seed, "workload"));
  std::mt19937_64 rng(derive_seed(seed, "actors"));
  auto nodes = usable_nodes(ov);
  std::uniform_int_distribution<std::size_t> pick(0, nodes.size() - 1);
  const OverlayCounters before = ov.counters();
  std::uint64_t density_violations = 0, messages = 0;
  std::vector<std::string> details;
  for (const auto& op : work) {
    const NodeId actor = nodes[pick(rng)];
    if (op.type == OpType::kInsert) {
      messages += insert(ov, actor, *op.key, ov.next_op(OpKind::kInsert)).messages;
    } else {
      messages += erase(ov, actor, *op.key, ov.next_op(OpKind::kDelete)).messages;
    }
    auto v = validate_balance(ov);
    if (!v.empty()) {
      ++density_violations;
      add_detail(details, 8, v.front());
    }
  }
  const auto& k = ov.counters();
  const double log_n = std::log2(static_cast<double>(ov.live_count()));
  const double migrated = static_cast<double>(k.elements_migrated - before.elements_migrated);
  const double per_op = ratio(migrated, static_cast<double>(ops));
  rep.summary = {{"distribution", to_string(dist)},
                 {"ops", ops},
                 {"nodes", ov.live_count()},
                 {"log2_nodes", log_n},
                 {"migrated_per_op", per_op},
                 {"migrated_constant", ratio(per_op, log_n)},
                 {"guard", 4 * log_n},
                 {"redistributions", k.element_redistributions - before.element_redistributions},
                 {"retriggers", k.retriggers - before.retriggers},
                 {"retriggers_short", k.retriggers_short - before.retriggers_short},
                 {"spread_violations", k.element_spread_violations - before.element_spread_violations},
                 {"density_violations_after_op", density_violations},
                 {"mean_messages", ratio(static_cast<double>(messages), static_cast<double>(ops))},
                 {"details", details},
                 {"overlay", overlay_summary(ov)}};
  return rep;
}

MetricsReport membership_experiment(const BuildParams& p, std::uint64_t ops, std::uint64_t master,
                                    ChurnPattern pattern) {
  static constexpr std::array<const char*, 3> kPatternNames = {"alternating", "random_walk",
                                                              "grow_shrink"};
  const char* pattern_name = kPatternNames[static_cast<std::size_t>(pattern)];
  MetricsReport rep;
  rep.suite = std::string("amortized_membership_") + to_string(p.config.mode) +
              (pattern == ChurnPattern::kAlternating ? "" : std::string("_") + pattern_name);
  rep.seed = master;
  BuildParams bp = p;
  bp.elements = 0;
  bp.config.balance_elements = false;
  const std::uint64_t seed = derive_seed(master, rep.suite);
  Overlay ov = make_overlay(bp, seed);
  std::mt19937_64 rng(derive_seed(seed, "churn"));
  std::bernoulli_distribution coin(0.5);
  std::uint64_t messages = 0, criticality_violations = 0, topology_failures = 0;
  double log_sum = 0, log2_sum = 0;
  std::vector<std::string> details;
  const OverlayCounters before = ov.counters();
  for (std::uint64_t i = 0; i < ops; ++i) {
    auto nodes = usable_nodes(ov);
    std::uniform_int_distribution<std::size_t> pick(0, nodes.size() - 1);
    NodeId actor = nodes[pick(rng)];
    const double lg = std::log2(static_cast<double>(ov.live_count()));
    log_sum += lg;
    log2_sum += lg * lg;
    bool join_now = i % 2 == 0;
    if (pattern == ChurnPattern::kRandomWalk) join_now = coin(rng);
    if (pattern == ChurnPattern::kGrowShrink) {
      // Skewed so that the root's criticality, and with it the structural
      // check, actually trips.
      join_now = 2 * i < ops;
      const auto& order = ov.expanded_order();
      if (join_now) {
        actor = ov.at(ov.height(), 0);
      } else {
        std::uniform_int_distribution<std::size_t> left(0, order.size() / 4);
        actor = order[left(rng)];
      }
    }
    OpTag tag;
    OpRecord rec;
    rec.actor = static_cast<std::int64_t>(actor.value);
    if (join_now || ov.live_count() <= 3) {
      tag = ov.next_op(OpKind::kJoin);
      rec.kind = "join";
      rec.result = static_cast<std::int64_t>(join(ov, actor, tag).value);
    } else {
      tag = ov.next_op(OpKind::kDepart);
      rec.kind = "depart";
      depart(ov, actor, tag);
    }
    rec.seq = tag.seq;
    rec.messages = op_messages(ov, tag);
    messages += rec.messages;
    rep.ops.push_back(rec);
    auto m = validate_membership(ov);
    if (!m.empty()) {
      ++criticality_violations;
      add_detail(details, 8, m.front());
    }
    if ((i + 1) % 100 == 0) {
      auto t = ov.validate_topology();
      if (!t.empty()) {
        ++topology_failures;
        add_detail(details, 8, t.front());
      }
    }
  }
  std::vector<std::string> guard_details;
  const std::uint64_t guard_violations = structural_guard_violations(ov, guard_details);
  details.insert(details.end(), guard_details.begin(), guard_details.end());
  const auto& k = ov.counters();
  const bool hyper = p.config.mode == RoutingMode::kHypernode;
  const double scale = hyper ? log_sum : log2_sum;
  const double constant = ratio(static_cast<double>(messages), scale);
  rep.summary = {{"mode", to_string(p.config.mode)},
                 {"pattern", pattern_name},
                 {"ops", ops},
                 {"messages_per_op", ratio(static_cast<double>(messages), static_cast<double>(ops))},
                 {"scale", hyper ? "log2 N" : "log2^2 N"},
                 {"constant", constant},
                 {"guard_constant", 10},
                 {"node_redistributions", k.node_redistributions - before.node_redistributions},
                 {"nodes_migrated", k.nodes_migrated - before.nodes_migrated},
                 {"extensions", k.extensions - before.extensions},
                 {"contractions", k.contractions - before.contractions},
                 {"forced_contractions", k.forced_contractions - before.forced_contractions},
                 {"structural_guard_violations", guard_violations},
                 {"criticality_violations_after_op", criticality_violations},
                 {"bucket_spread_violations", k.bucket_spread_violations - before.bucket_spread_violations},
                 {"topology_failures", topology_failures},
                 {"details", details},
                 {"overlay", overlay_summary(ov)}};
  return rep;
}

}  // namespace d2
