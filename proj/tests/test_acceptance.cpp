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


// Acceptance run: one PASS/FAIL line per criterion. Every suite writes its
// metrics to <out>/run1, then everything runs again into <out>/run2 and the
// two trees must match byte for byte.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "d2tree/balance.hpp"
#include "d2tree/harness.hpp"
#include "d2tree/index.hpp"
#include "d2tree/membership.hpp"
#include "d2tree/weights.hpp"
#include "json.hpp"

using namespace d2;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::string summary;
  json metrics = json::object();
};

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(3);
  os << x;
  return os.str();
}

json report_json(const MetricsReport& r) { return json::parse(r.to_json()); }

BuildParams params(std::uint32_t levels, std::uint32_t bucket, std::uint64_t elements,
                   RoutingMode mode) {
  BuildParams p;
  p.pbt_levels = levels;
  p.bucket_size = bucket;
  p.elements = elements;
  p.config.mode = mode;
  return p;
}

constexpr RoutingMode kModes[] = {RoutingMode::kTable, RoutingMode::kHypernode};

// 1. Every search and range answer of a long mixed run equals the ledger.
Outcome correctness(std::uint64_t seed) {
  Outcome o;
  std::uint64_t mismatches = 0, failures = 0;
  for (RoutingMode mode : kModes) {
    auto ov = make_overlay(params(6, 4, 2000, mode), seed);
    WorkloadSpec spec;
    spec.ops = 100000;
    spec.mix = OpMix{0.4, 0.2, 0.3, 0.1, 0, 0, 0};
    RunOptions ro;
    ro.validate_every = 1000;
    auto res = run_workload(ov, gen_workload(spec, derive_seed(seed, "c1")), seed, ro);
    mismatches += res.mismatches;
    failures += res.validation_failures;
    o.metrics[to_string(mode)] = report_json(res.report);
  }
  o.pass = mismatches == 0 && failures == 0;
  o.summary = "1e5 mixed ops per mode, mismatches " + std::to_string(mismatches) +
              ", sampled oracle failures " + std::to_string(failures);
  return o;
}

// 2. Lazy invariants and the factor-2 bound after every operation on small
// overlays, sampled on a large one.
Outcome weight_invariants(std::uint64_t seed) {
  Outcome o;
  std::uint64_t checks = 0, violations = 0;
  std::string first;
  for (std::uint32_t levels = 1; levels <= 6; ++levels) {
    for (std::uint32_t bucket = 1; bucket <= 3; ++bucket) {
      auto ov = make_overlay(params(levels, bucket, 20, RoutingMode::kTable), seed + levels);
      std::mt19937_64 rng(derive_seed(seed, "c2/" + std::to_string(levels * 10 + bucket)));
      std::uniform_int_distribution<Key> key(0, 5000);
      std::vector<Key> stored = flatten(ov);
      for (int i = 0; i < 400; ++i) {
        auto nodes = ov.expanded_order();
        const NodeId actor = nodes[rng() % nodes.size()];
        const auto r = rng() % 10;
        if (r < 5 || stored.empty()) {
          const Key k = key(rng);
          insert(ov, actor, k, ov.next_op(OpKind::kInsert));
          stored.push_back(k);
        } else if (r < 8) {
          const std::size_t j = rng() % stored.size();
          erase(ov, actor, stored[j], ov.next_op(OpKind::kDelete));
          stored[j] = stored.back();
          stored.pop_back();
        } else if (r == 8 || ov.live_count() < 4) {
          join(ov, actor, ov.next_op(OpKind::kJoin));
        } else {
          // Elements on a departing node move to its neighbour.
          depart(ov, actor, ov.next_op(OpKind::kDepart));
        }
        ++checks;
        auto v = validate_weights(ov);
        if (!v.empty()) {
          ++violations;
          if (first.empty()) first = v.front();
        }
      }
    }
  }
  auto big = make_overlay(params(9, 2, 20000, RoutingMode::kTable), seed);
  std::mt19937_64 rng(derive_seed(seed, "c2/large"));
  std::uniform_int_distribution<Key> key(0, (Key{1} << 32) - 1);
  const auto nodes = big.expanded_order();
  std::uint64_t sampled = 0;
  for (int i = 0; i < 20000; ++i) {
    insert(big, nodes[rng() % nodes.size()], key(rng), big.next_op(OpKind::kInsert));
    if (i % 500 == 499) {
      ++sampled;
      auto v = validate_weights(big);
      if (!v.empty()) {
        ++violations;
        if (first.empty()) first = v.front();
      }
    }
  }
  o.pass = violations == 0;
  o.metrics = {{"checked_after_op", checks}, {"sampled_large", sampled},
               {"violations", violations}, {"first", first}};
  o.summary = std::to_string(checks) + " per-op checks on <= 2^5 leaves, " +
              std::to_string(sampled) + " samples at 2^8 leaves, violations " +
              std::to_string(violations);
  return o;
}

// 3 and 4 share one weights experiment.
MetricsReport weights_run(std::uint64_t seed) {
  return weights_experiment({7, 8, 9}, 100000, RoutingMode::kTable, seed);
}

Outcome weight_cost(const MetricsReport& r) {
  Outcome o;
  const auto& s = r.summary;
  const double worst = s["max_recomputed_per_insert"].get<double>();
  const double growth = s["growth"].get<double>();
  const auto violations = s["sampled_weight_violations"].get<std::uint64_t>();
  o.pass = worst <= 25 && growth <= 1.5 && violations == 0;
  o.metrics = report_json(r);
  o.summary = "recomputed nodes per insert <= " + fmt(worst) + " (guard 25), growth " +
              fmt(growth) + " (guard 1.5), internal-only growth " +
              fmt(s["growth_internal"].get<double>());
  return o;
}

Outcome weight_gaps(const MetricsReport& r) {
  Outcome o;
  const auto& s = r.summary;
  const auto gaps = s["recompute_gaps"].get<std::uint64_t>();
  const auto short_gaps = s["recompute_gaps_short"].get<std::uint64_t>();
  o.pass = short_gaps == 0;
  o.metrics = {{"recompute_gaps", gaps}, {"recompute_gaps_short", short_gaps},
               {"worst_gap_fraction", s["worst_gap_fraction"]}};
  o.summary = std::to_string(short_gaps) + " of " + std::to_string(gaps) +
              " gaps below eps_h*b/2 updates, worst fraction " +
              fmt(s["worst_gap_fraction"].get<double>());
  return o;
}

// 5. Density after every op, spread after redistribution, migration cost
// and hotspot re-trigger distance.
Outcome load_balancing(std::uint64_t seed) {
  Outcome o;
  bool ok = true;
  double worst_constant = 0;
  std::uint64_t short_retriggers = 0, retriggers = 0;
  for (RoutingMode mode : kModes) {
    for (std::uint32_t levels : {5u, 7u}) {
      for (auto dist : {KeyDistribution::kUniform, KeyDistribution::kHotspot}) {
        auto r = balance_experiment(params(levels, 6, 0, mode), 100000, dist, seed);
        const auto& s = r.summary;
        ok = ok && s["density_violations_after_op"].get<std::uint64_t>() == 0 &&
             s["spread_violations"].get<std::uint64_t>() == 0;
        if (dist == KeyDistribution::kUniform) {
          ok = ok && s["migrated_per_op"].get<double>() <= s["guard"].get<double>();
          worst_constant = std::max(worst_constant, s["migrated_constant"].get<double>());
        } else {
          short_retriggers += s["retriggers_short"].get<std::uint64_t>();
          retriggers += s["retriggers"].get<std::uint64_t>();
        }
        o.metrics[std::string(to_string(mode)) + "/" + std::to_string(levels) + "/" +
                  to_string(dist)] = report_json(r);
      }
    }
  }
  o.pass = ok && short_retriggers == 0;
  o.summary = "uniform migrated/op constant " + fmt(worst_constant) +
              " x log2 N (guard 4), hotspot short re-triggers " +
              std::to_string(short_retriggers) + " of " + std::to_string(retriggers);
  return o;
}

// 6. Node criticality after each op, bucket spread, membership cost and the
// structural doubling/halving guard.
Outcome node_balancing(std::uint64_t seed) {
  Outcome o;
  bool ok = true;
  std::map<std::string, double> worst;
  std::uint64_t structural = 0;
  for (RoutingMode mode : kModes) {
    for (auto pattern : {ChurnPattern::kAlternating, ChurnPattern::kRandomWalk,
                         ChurnPattern::kGrowShrink}) {
      std::vector<std::uint32_t> sizes = {5, 7};
      if (pattern == ChurnPattern::kGrowShrink) sizes = {5};
      for (std::uint32_t levels : sizes) {
        auto r = membership_experiment(params(levels, 6, 0, mode), 10000, seed, pattern);
        const auto& s = r.summary;
        ok = ok && s["criticality_violations_after_op"].get<std::uint64_t>() == 0 &&
             s["bucket_spread_violations"].get<std::uint64_t>() == 0 &&
             s["structural_guard_violations"].get<std::uint64_t>() == 0 &&
             s["topology_failures"].get<std::uint64_t>() == 0 &&
             s["constant"].get<double>() <= 10;
        structural += s["extensions"].get<std::uint64_t>() + s["contractions"].get<std::uint64_t>();
        auto& w = worst[to_string(mode)];
        w = std::max(w, s["constant"].get<double>());
        o.metrics[std::string(to_string(mode)) + "/" + s["pattern"].get<std::string>() + "/" +
                  std::to_string(levels)] = report_json(r);
      }
    }
  }
  o.pass = ok;
  o.summary = "constants table " + fmt(worst["table"]) + " x log2^2 N, hypernode " +
              fmt(worst["hypernode"]) + " x log2 N (guard 10), " + std::to_string(structural) +
              " structural events audited";
  return o;
}

// 7. Every start against keys at and around every stored element.
Outcome search_cost(std::uint64_t seed) {
  Outcome o;
  std::map<RoutingMode, std::vector<std::uint32_t>> owners;
  bool ok = true;
  std::map<RoutingMode, std::uint64_t> worst;
  double bound = 0;
  std::uint64_t wrong = 0;
  for (RoutingMode mode : kModes) {
    auto p = params(6, 5, 0, mode);
    p.config.balance_elements = false;
    auto ov = make_overlay(p, seed);
    p.elements = 3 * ov.live_count();
    ov = make_overlay(p, seed);
    std::set<Key> probe;
    for (Key k : flatten(ov)) {
      probe.insert(k);
      probe.insert(k + 1);
      if (k > 0) probe.insert(k - 1);
    }
    probe.insert(0);
    bound = 6 * std::log2(static_cast<double>(ov.live_count())) + 8;
    std::map<Key, NodeId> truth;
    for (Key a : probe) truth[a] = owner_by_scan(ov, a);
    const auto order = ov.expanded_order();
    for (NodeId start : order) {
      for (Key a : probe) {
        auto r = search(ov, start, a, ov.next_op(OpKind::kSearch));
        worst[mode] = std::max(worst[mode], r.messages);
        owners[mode].push_back(r.owner.value);
        if (r.owner != truth[a]) ++wrong;
      }
    }
    ok = ok && static_cast<double>(worst[mode]) <= bound;
    o.metrics[to_string(mode)] = {{"nodes", ov.live_count()},
                                  {"searches", order.size() * probe.size()},
                                  {"worst_messages", worst[mode]},
                                  {"bound", bound}};
  }
  const bool same = owners[RoutingMode::kTable] == owners[RoutingMode::kHypernode];
  o.pass = ok && same && wrong == 0;
  o.metrics["identical_owners"] = same;
  o.metrics["wrong_owners"] = wrong;
  o.summary = "worst messages table " + std::to_string(worst[RoutingMode::kTable]) +
              ", hypernode " + std::to_string(worst[RoutingMode::kHypernode]) + " (bound " +
              fmt(bound) + "), owners identical across modes: " + (same ? "yes" : "no") +
              ", wrong owners " + std::to_string(wrong);
  return o;
}

// 8. Congestion at N = 127 and 511.
Outcome congestion(std::uint64_t seed) {
  Outcome o;
  bool ok = true;
  std::string text;
  for (RoutingMode mode : kModes) {
    auto small = congestion_experiment(params(5, 6, 0, mode), 30, seed);
    auto large = congestion_experiment(params(7, 6, 0, mode), 30, seed);
    const double growth = large.summary["mean_max_over_mean"].get<double>() /
                          small.summary["mean_max_over_mean"].get<double>();
    const bool within = small.summary["within_guard"].get<bool>() &&
                        large.summary["within_guard"].get<bool>();
    ok = ok && within && growth <= 9.0 / 7.0 * 1.5;
    o.metrics[std::string(to_string(mode)) + "/127"] = report_json(small);
    o.metrics[std::string(to_string(mode)) + "/511"] = report_json(large);
    text += std::string(text.empty() ? "" : "; ") + to_string(mode) + " max " +
            std::to_string(small.summary["max_accesses"].get<std::uint64_t>()) + "/" +
            std::to_string(large.summary["max_accesses"].get<std::uint64_t>()) + " (guards " +
            fmt(small.summary["guard"].get<double>()) + "/" +
            fmt(large.summary["guard"].get<double>()) + "), ratio growth " + fmt(growth);
  }
  o.pass = ok;
  o.summary = text + " (limit " + fmt(9.0 / 7.0 * 1.5) + ")";
  return o;
}

// 9. Scripted failures, healed either by a neighbour up front or by the
// operations that run into them.
Outcome fault_tolerance(std::uint64_t seed) {
  Outcome o;
  bool ok = true;
  int scenarios = 0;
  const std::vector<std::pair<std::string, std::function<NodeId(const Overlay&)>>> victims = {
      {"bucket_tail", [](const Overlay& ov) { return ov.node(ov.at(ov.height(), 3)).bucket.back(); }},
      {"internal", [](const Overlay& ov) { return ov.at(2, 1); }},
      {"root", [](const Overlay& ov) { return ov.root(); }},
      {"representative", [](const Overlay& ov) { return ov.at(ov.height(), 5); }},
  };
  for (RoutingMode mode : kModes) {
    for (const auto& [name, pick] : victims) {
      for (bool eager : {true, false}) {
        auto ov = make_overlay(params(5, 4, 1500, mode), seed);
        const NodeId dead = pick(ov);
        ov.net().fail_node(dead);
        std::vector<std::string> problems;
        if (eager) heal_pending(ov, ov.next_op(OpKind::kMaintenance));
        WorkloadSpec spec;
        spec.ops = 1000;
        spec.mix = OpMix{0.4, 0.2, 0.3, 0.1, 0, 0, 0};
        auto res = run_workload(ov, gen_workload(spec, derive_seed(seed, "c9/" + name)), seed);
        if (ov.node(dead).live) problems.push_back("failed node still in the overlay");
        for (const auto& v : oracle_suite(ov, &res.ledger)) {
          if (!v.pass) problems.push_back(v.name + ": " + v.details.front());
        }
        // Every surviving key is found where it is stored.
        for (Key k : flatten(ov)) {
          const NodeId at = search(ov, ov.root(), k, ov.next_op(OpKind::kSearch)).owner;
          const auto& s = ov.node(at).store;
          if (!std::binary_search(s.begin(), s.end(), k)) {
            problems.push_back("key " + std::to_string(k) + " not found after healing");
            break;
          }
        }
        if (res.mismatches != 0) problems.push_back("post-heal run mismatches");
        ++scenarios;
        ok = ok && problems.empty();
        o.metrics[std::string(to_string(mode)) + "/" + name + (eager ? "/eager" : "/lazy")] = {
            {"heals", ov.counters().heals},
            {"elements_lost", ov.counters().elements_lost},
            {"problems", problems},
            {"run", report_json(res.report)["summary"]}};
      }
    }
  }
  o.pass = ok;
  o.summary = std::to_string(scenarios) +
              " scenarios (bucket tail, internal, root, representative; both modes; healed "
              "eagerly or by operations)";
  return o;
}

struct Suite {
  std::vector<Outcome> outcomes;  // criteria 1..9
};

Suite run_all(std::uint64_t seed, const std::filesystem::path& dir) {
  Suite s;
  s.outcomes.push_back(correctness(seed));
  s.outcomes.push_back(weight_invariants(seed));
  const auto w = weights_run(seed);
  s.outcomes.push_back(weight_cost(w));
  s.outcomes.push_back(weight_gaps(w));
  s.outcomes.push_back(load_balancing(seed));
  s.outcomes.push_back(node_balancing(seed));
  s.outcomes.push_back(search_cost(seed));
  s.outcomes.push_back(congestion(seed));
  s.outcomes.push_back(fault_tolerance(seed));
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < s.outcomes.size(); ++i) {
    std::ofstream(dir / ("criterion_" + std::to_string(i + 1) + ".json"))
        << s.outcomes[i].metrics.dump(2) << '\n';
  }
  return s;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::uint64_t seed = 20260101;
  std::string out = "acceptance";
  app.add_option("--seed", seed, "Master seed");
  app.add_option("--out", out, "Directory for metrics files");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  const std::filesystem::path root(out);
  static const char* kNames[] = {"correctness",      "weight invariants", "weight update cost",
                                 "recompute gaps",   "load balancing",    "node balancing",
                                 "search cost",      "congestion",        "fault tolerance"};
  bool all = true;
  auto line = [&](std::size_t n, const char* name, bool pass, const std::string& text) {
    std::printf("criterion %zu (%s): %s: %s\n", n, name, pass ? "PASS" : "FAIL", text.c_str());
    std::fflush(stdout);
    all = all && pass;
  };
  const Suite first = run_all(seed, root / "run1");
  for (std::size_t i = 0; i < first.outcomes.size(); ++i) {
    line(i + 1, kNames[i], first.outcomes[i].pass, first.outcomes[i].summary);
  }
  run_all(seed, root / "run2");
  std::vector<std::string> differing;
  for (std::size_t i = 1; i <= first.outcomes.size(); ++i) {
    const std::string f = "criterion_" + std::to_string(i) + ".json";
    if (slurp(root / "run1" / f) != slurp(root / "run2" / f)) differing.push_back(f);
  }
  std::string text = differing.empty() ? "all 9 metrics files byte-identical on rerun"
                                       : "differing: " + differing.front();
  line(10, "determinism", differing.empty(), text);
  return all ? 0 : 1;
}
