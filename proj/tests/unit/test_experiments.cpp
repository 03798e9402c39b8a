// Copyright 2026 The bnlab Authors
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

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <json.hpp>
#include <sstream>

#include "bnlab/error.hpp"
#include "bnlab/experiments.hpp"

using namespace bnlab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bnlab_unit_" + name);
  fs::remove_all(p);
  return p;
}

std::optional<ErrorCode> config_code(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

ExperimentConfig tiny_dln() {
  ExperimentConfig c;
  c.set("model.depth", "3");
  c.set("model.dim", "3");
  c.set("model.samples", "16");
  c.set("train.steps", "6");
  c.set("instrument.ics_every", "2");
  c.set("instrument.probe_every", "3");
  c.set("instrument.moments_every", "2");
  return c;
}

}  // namespace

TEST_CASE("config: defaults resolve per model kind") {
  const Settings dln = ExperimentConfig().resolve();
  CHECK(dln.model.kind == ModelKind::kDln);
  CHECK(dln.model.dln.depth == 25);
  CHECK(dln.model.dln.samples == 1000);
  CHECK(dln.train.lr == 1e-3);
  CHECK(dln.train.steps == 10000);
  CHECK(dln.train.batch_size == 0);
  CHECK(dln.instrument.probe_multipliers == default_dln_multipliers());
  CHECK(dln.compare.seeds == std::vector<std::uint64_t>{0});
  CHECK(dln.compare.variants.size() == 8);

  ExperimentConfig c;
  c.set("model.kind", "mlp");
  const Settings mlp = c.resolve();
  CHECK(mlp.model.mlp.samples == 1024);
  CHECK(mlp.train.lr == 0.1);
  CHECK(mlp.train.steps == 1000);
  CHECK(mlp.train.batch_size == 128);
  CHECK(mlp.instrument.probe_multipliers == default_mlp_multipliers());
}

TEST_CASE("config: explicit values win over defaults") {
  ExperimentConfig c = ExperimentConfig::from_json(R"({"seed": 9, "train": {"lr": 0.5, "steps": 3},
                                                      "compare": {"seeds": [4, 5]}})");
  c.set_assignment("model.norm=bn");
  c.set("compare.variants", "vanilla,lp2");
  const Settings s = c.resolve();
  CHECK(s.seed == 9);
  CHECK(s.train.lr == 0.5);
  CHECK(s.train.steps == 3);
  CHECK(s.model.norm() == NormKind::kBatchNorm);
  CHECK(s.compare.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(s.compare.variants == std::vector<std::string>{"vanilla", "lp2"});
}

TEST_CASE("config: rejects unknown keys, wrong types and bad values") {
  CHECK(config_code([] { ExperimentConfig::from_json(R"({"train": {"learning_rate": 1}})"); }) == ErrorCode::kConfig);
  CHECK(config_code([] { ExperimentConfig::from_json(R"({"bogus": 1})"); }) == ErrorCode::kConfig);
  CHECK(config_code([] { ExperimentConfig::from_json(R"({"train": {"steps": "many"}})"); }) == ErrorCode::kConfig);
  CHECK(config_code([] { ExperimentConfig::from_json(R"({"train": {"steps": -1}})"); }) == ErrorCode::kConfig);
  CHECK(config_code([] { ExperimentConfig::from_json("{not json"); }) == ErrorCode::kConfig);
  CHECK(config_code([] { ExperimentConfig().set("model.nope", "1"); }) == ErrorCode::kConfig);
  CHECK(config_code([] { ExperimentConfig().set_assignment("train.lr"); }) == ErrorCode::kConfig);
  CHECK(config_code([] {
          ExperimentConfig c;
          c.set("model.norm", "groupnorm");
          c.resolve();
        }) == ErrorCode::kConfig);
  CHECK(config_code([] {
          ExperimentConfig c;
          c.set("train.lr", "-1");
          c.resolve();
        }) == ErrorCode::kConfig);
  CHECK(config_code([] {
          ExperimentConfig c;
          c.set("compare.variants", "vanilla,warp");
          c.resolve();
        }) == ErrorCode::kConfig);
  CHECK(config_code([] { run_command("fly", ExperimentConfig(), scratch("fly")); }) == ErrorCode::kConfig);
}

TEST_CASE("config: resolved json round-trips") {
  ExperimentConfig c = tiny_dln();
  c.set("seed", "3");
  const std::string text = c.resolved_json();
  const ExperimentConfig back = ExperimentConfig::from_json(text);
  CHECK(back.resolved_json() == text);
  const json doc = json::parse(text);
  CHECK(doc["train"]["lr"] == 1e-3);
  CHECK(doc["model"]["samples"] == 16);
}

TEST_CASE("variants") {
  CHECK(parse_variant("vanilla").norm == NormKind::kNone);
  CHECK(parse_variant("adjusted").mode == TrainMode::kAdjusted);
  CHECK(parse_variant("adjusted").norm == NormKind::kNone);
  CHECK(parse_variant("reduced_lr").mode == TrainMode::kReducedLr);
  CHECK(parse_variant("lpinf").norm == NormKind::kLpInf);
  const Variant v = parse_variant("bn:adjusted");
  CHECK(v.norm == NormKind::kBatchNorm);
  CHECK(v.mode == TrainMode::kAdjusted);
  CHECK_THROWS_AS(parse_variant("bn:sideways"), Error);
}

TEST_CASE("format_double") {
  CHECK(format_double(0.1) == "0.10000000000000001");
  CHECK(format_double(2.0) == "2");
  CHECK(format_double(std::numeric_limits<double>::quiet_NaN()).empty());
}

TEST_CASE("train writes loss, moments and a manifest that reproduces the run") {
  const fs::path a = scratch("train_a"), b = scratch("train_b");
  ExperimentConfig c = tiny_dln();
  c.set("model.norm", "bn");
  const RunResult r = run_command("train", c, a);
  CHECK(r.exit_code == kExitOk);
  const auto loss = lines(slurp(a / "loss.csv"));
  REQUIRE(loss.size() == 8);
  CHECK(loss[0] == "step,loss");
  CHECK(loss[1].rfind("0,", 0) == 0);
  const auto moments = lines(slurp(a / "moments.csv"));
  CHECK(moments[0] == "step,layer,unit,mean,variance");
  CHECK(moments.size() == 1 + 4 * 3);  // steps 0, 2, 4, 6 and three units

  const json manifest = json::parse(slurp(a / "manifest.json"));
  CHECK(manifest["schema"] == kManifestSchema);
  CHECK(manifest["command"] == "train");
  CHECK(manifest["exit_code"] == 0);
  CHECK(manifest["divergence"]["diverged"] == false);

  const ExperimentConfig again = ExperimentConfig::from_file(a / "manifest.json");
  CHECK(run_command("train", again, b).exit_code == kExitOk);
  CHECK(slurp(a / "loss.csv") == slurp(b / "loss.csv"));
  CHECK(slurp(a / "moments.csv") == slurp(b / "moments.csv"));
}

TEST_CASE("ics and probe artifacts") {
  const fs::path dir = scratch("ics");
  ExperimentConfig c = tiny_dln();
  CHECK(run_command("ics", c, dir).exit_code == kExitOk);
  const auto ics = lines(slurp(dir / "ics.csv"));
  CHECK(ics[0] == "step,layer,l2_diff,cos_angle");
  CHECK(ics.size() == 1 + 4 * 3);
  CHECK(ics[1].rfind("0,0,0,1", 0) == 0);

  const fs::path pd = scratch("probe");
  c.set("instrument.probe_multipliers", "[0.5,1,2]");
  CHECK(run_command("probe", c, pd).exit_code == kExitOk);
  const auto land = lines(slurp(pd / "landscape.csv"));
  CHECK(land[0] == "step,multiplier,loss,grad_l2_diff,effective_beta");
  CHECK(land.size() == 1 + 3 * 4);  // steps 0, 3, 6
  CHECK(lines(slurp(pd / "landscape_summary.csv")).size() == 1 + 3);
}

TEST_CASE("divergence sets exit code 2 unless expected") {
  ExperimentConfig c = tiny_dln();
  c.set("train.lr", "50");
  const fs::path dir = scratch("diverge");
  CHECK(run_command("train", c, dir).exit_code == kExitDiverged);
  const json manifest = json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest["divergence"]["diverged"] == true);
  CHECK(manifest["exit_code"] == kExitDiverged);
  c.set("train.divergence_expected", "true");
  CHECK(run_command("train", c, scratch("diverge2")).exit_code == kExitOk);
}

TEST_CASE("verify and compare") {
  ExperimentConfig v;
  v.set("verify.seeds", "3");
  const fs::path vd = scratch("verify");
  CHECK(run_command("verify", v, vd).exit_code == kExitOk);
  const json doc = json::parse(slurp(vd / "verify.json"));
  CHECK(doc["total"] == 21);
  CHECK(doc["failed"] == 0);
  CHECK(doc["pass"] == true);

  ExperimentConfig c = tiny_dln();
  c.set("compare.variants", R"(["vanilla","bn","adjusted"])");
  c.set("compare.seeds", "[1,2]");
  const fs::path cd = scratch("compare");
  CHECK(run_command("compare", c, cd).exit_code == kExitOk);
  const auto rows = lines(slurp(cd / "summary.csv"));
  REQUIRE(rows.size() == 7);
  CHECK(rows[0] ==
        "variant,seed,norm,mode,steps,initial_loss,final_loss,area_under_loss,gradient_evaluations,diverged,"
        "diverged_step");
  CHECK(rows[1].rfind("vanilla,1,none,simultaneous,6,", 0) == 0);
  CHECK(rows[5].rfind("adjusted,1,none,adjusted,6,", 0) == 0);
  // three Dense layers: three gradient evaluations per adjusted step
  CHECK(rows[5].find(",18,0,") != std::string::npos);
  CHECK(rows[1].find(",6,0,") != std::string::npos);
}
