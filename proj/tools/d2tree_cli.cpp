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


// Command-line driver: builds overlays, runs workloads and experiments, and
// writes metrics as JSON or CSV.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "d2tree/harness.hpp"
#include "d2tree/index.hpp"
#include "d2tree/workload.hpp"

namespace {

struct Options {
  std::uint32_t pbt_levels = 5;
  std::uint32_t bucket_size = 4;
  std::uint64_t elements = 0;
  std::uint64_t ops = 10000;
  std::uint64_t seed = 1;
  std::string mode = "table";
  double c_crit = 2.0;
  std::uint32_t batch = 1;
  std::string workload;
  std::string out;
  std::string format = "json";
};

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--pbt-levels", o.pbt_levels, "Levels of the perfect binary tree")
      ->check(CLI::Range(1, 20));
  cmd->add_option("--bucket-size", o.bucket_size, "Initial members per bucket")
      ->check(CLI::Range(1, 1000));
  cmd->add_option("--elements", o.elements, "Elements preloaded evenly");
  cmd->add_option("--ops", o.ops, "Operations to run");
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("--mode", o.mode, "Routing mode")->check(CLI::IsMember({"table", "hypernode"}));
  cmd->add_option("--c-crit", o.c_crit, "Density criticality bound, in (1, 2]");
  cmd->add_option("--batch", o.batch, "Elements per transfer batch")->check(CLI::PositiveNumber);
  cmd->add_option("--workload", o.workload, "Workload file (JSON lines)");
  cmd->add_option("--out", o.out, "Output file, stdout when absent");
  cmd->add_option("--format", o.format, "Metrics format")->check(CLI::IsMember({"json", "csv"}));
}

d2::BuildParams params(const Options& o) {
  d2::BuildParams p;
  p.pbt_levels = o.pbt_levels;
  p.bucket_size = o.bucket_size;
  p.elements = o.elements;
  p.config.mode = d2::parse_routing_mode(o.mode);
  p.config.c_crit = o.c_crit;
  p.config.batch = o.batch;
  p.config.seed = o.seed;
  p.config.validate();
  return p;
}

void emit(const Options& o, const std::string& text) {
  if (o.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(o.out, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + o.out);
  f << text;
}

std::vector<d2::WorkloadOp> load_workload(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read workload " + path);
  return d2::read_workload(f);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"D2-tree overlay simulator"};
  app.require_subcommand(1);
  Options o;

  auto* build = app.add_subcommand("build", "Construct an overlay and dump it");
  add_common(build, o);

  auto* run = app.add_subcommand("run", "Execute a workload file against a fresh overlay");
  add_common(run, o);
  std::uint64_t validate_every = 0;
  run->add_option("--validate-every", validate_every, "Run the oracle suite every N ops");

  auto* congestion = app.add_subcommand("congestion", "One search per node, over several seeds");
  add_common(congestion, o);
  std::uint32_t seeds = 30;
  congestion->add_option("--seeds", seeds, "Independent overlays")->check(CLI::PositiveNumber);

  auto* amortized = app.add_subcommand("amortized", "Amortized cost experiments");
  add_common(amortized, o);
  std::string experiment = "weights";
  std::vector<std::uint32_t> levels = {7, 8, 9};
  amortized->add_option("--experiment", experiment, "Which experiment")
      ->check(CLI::IsMember({"weights", "balance", "hotspot", "membership"}));
  amortized->add_option("--levels", levels, "PBT levels for the weights experiment");
  std::string pattern = "alternating";
  amortized->add_option("--pattern", pattern, "Join/departure order for the membership experiment")
      ->check(CLI::IsMember({"alternating", "random", "grow-shrink"}));

  auto* validate = app.add_subcommand("validate", "Run every invariant check");
  add_common(validate, o);

  auto* gen = app.add_subcommand("gen", "Generate a workload file");
  add_common(gen, o);
  std::string dist = "uniform";
  d2::OpMix mix;
  gen->add_option("--dist", dist, "Key distribution")
      ->check(CLI::IsMember({"uniform", "hotspot", "ascending"}));
  gen->add_option("--insert", mix.insert, "Relative frequency of inserts");
  gen->add_option("--delete", mix.erase, "Relative frequency of deletes");
  gen->add_option("--search", mix.search, "Relative frequency of searches");
  gen->add_option("--range", mix.range, "Relative frequency of range queries");
  gen->add_option("--join", mix.join, "Relative frequency of joins");
  gen->add_option("--depart", mix.depart, "Relative frequency of departures");
  gen->add_option("--fail", mix.fail, "Relative frequency of failures");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*build) {
      auto ov = d2::make_overlay(params(o), o.seed);
      emit(o, ov.dump());
    } else if (*run) {
      if (o.workload.empty()) throw std::invalid_argument("run needs --workload");
      auto ops = load_workload(o.workload);
      auto ov = d2::make_overlay(params(o), o.seed);
      d2::RunOptions ro;
      ro.validate_every = validate_every;
      auto res = d2::run_workload(ov, ops, o.seed, ro);
      emit(o, res.report.render(o.format));
      return res.mismatches == 0 && res.validation_failures == 0 ? 0 : 1;
    } else if (*congestion) {
      auto rep = d2::congestion_experiment(params(o), seeds, o.seed);
      emit(o, rep.render(o.format));
      return rep.summary["within_guard"].get<bool>() ? 0 : 1;
    } else if (*amortized) {
      d2::MetricsReport rep;
      const auto p = params(o);
      if (experiment == "weights") {
        rep = d2::weights_experiment(levels, o.ops, p.config.mode, o.seed);
      } else if (experiment == "balance") {
        rep = d2::balance_experiment(p, o.ops, d2::KeyDistribution::kUniform, o.seed);
      } else if (experiment == "hotspot") {
        rep = d2::balance_experiment(p, o.ops, d2::KeyDistribution::kHotspot, o.seed);
      } else {
        auto churn = d2::ChurnPattern::kAlternating;
        if (pattern == "random") churn = d2::ChurnPattern::kRandomWalk;
        if (pattern == "grow-shrink") churn = d2::ChurnPattern::kGrowShrink;
        rep = d2::membership_experiment(p, o.ops, o.seed, churn);
      }
      emit(o, rep.render(o.format));
    } else if (*validate) {
      auto ov = d2::make_overlay(params(o), o.seed);
      nlohmann::json j;
      bool ok = true;
      if (!o.workload.empty()) {
        auto res = d2::run_workload(ov, load_workload(o.workload), o.seed);
        ok = res.mismatches == 0 && res.validation_failures == 0;
        j["run"] = res.report.summary;
      }
      auto verdicts = d2::oracle_suite(ov);
      ok = ok && d2::all_pass(verdicts);
      j["verdicts"] = d2::to_json(verdicts);
      j["pass"] = ok;
      emit(o, j.dump(2) + "\n");
      return ok ? 0 : 1;
    } else if (*gen) {
      d2::WorkloadSpec spec;
      spec.dist = d2::parse_key_distribution(dist);
      spec.ops = o.ops;
      spec.mix = mix;
      std::ostringstream out;
      d2::write_workload(out, d2::gen_workload(spec, d2::derive_seed(o.seed, "workload")));
      emit(o, out.str());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
