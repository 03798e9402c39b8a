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

#include "bnlab/experiments.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace bnlab {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

enum class FieldType { kUInt, kFloat, kBool, kString, kUIntList, kFloatList, kStringList };

struct Field {
  std::string section;  // empty for top-level keys
  std::string name;
  FieldType type;
  json fallback;  // null means "auto": resolved per model kind
};

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = {
      {"", "seed", FieldType::kUInt, 0},
      {"", "out", FieldType::kString, "bnlab_out"},
      {"model", "kind", FieldType::kString, "dln"},
      {"model", "depth", FieldType::kUInt, 25},
      {"model", "dim", FieldType::kUInt, 10},
      {"model", "samples", FieldType::kUInt, nullptr},
      {"model", "norm", FieldType::kString, "none"},
      {"model", "norm_last", FieldType::kBool, false},
      {"model", "norm_eps", FieldType::kFloat, kDefaultNormEps},
      {"model", "noise_n_mu", FieldType::kFloat, 0.5},
      {"model", "noise_n_sigma", FieldType::kFloat, 1.25},
      {"model", "noise_r_mu", FieldType::kFloat, 0.1},
      {"model", "noise_r_sigma", FieldType::kFloat, 0.1},
      {"model", "dims", FieldType::kUIntList, json::array({16, 32, 32, 10})},
      {"model", "classes", FieldType::kUInt, 3},
      {"model", "separation", FieldType::kFloat, 1.0},
      {"train", "lr", FieldType::kFloat, nullptr},
      {"train", "steps", FieldType::kUInt, nullptr},
      {"train", "batch_size", FieldType::kUInt, nullptr},
      {"train", "mode", FieldType::kString, "simultaneous"},
      {"train", "bundle_norm_with_dense", FieldType::kBool, true},
      {"train", "divergence_threshold", FieldType::kFloat, 1e12},
      {"train", "divergence_expected", FieldType::kBool, false},
      {"instrument", "ics_every", FieldType::kUInt, 50},
      {"instrument", "probe_every", FieldType::kUInt, 50},
      {"instrument", "probe_multipliers", FieldType::kFloatList, nullptr},
      {"instrument", "moments_every", FieldType::kUInt, 100},
      {"instrument", "moments_layer", FieldType::kUInt, nullptr},
      {"instrument", "moments_units", FieldType::kUInt, 5},
      {"verify", "seeds", FieldType::kUInt, 100},
      {"verify", "m_min", FieldType::kUInt, 3},
      {"verify", "m_max", FieldType::kUInt, 16},
      {"verify", "d_min", FieldType::kUInt, 1},
      {"verify", "d_max", FieldType::kUInt, 8},
      {"verify", "lambda", FieldType::kFloat, 2.5},
      {"compare", "variants", FieldType::kStringList,
       json::array({"vanilla", "bn", "noisy_bn", "lp1", "lp2", "lpinf", "adjusted", "reduced_lr"})},
      {"compare", "seeds", FieldType::kUIntList, nullptr},
  };
  return fields;
}

std::string full_key(const Field& f) { return f.section.empty() ? f.name : f.section + "." + f.name; }

const Field* find_field(const std::string& key) {
  for (const Field& f : schema())
    if (full_key(f) == key) return &f;
  return nullptr;
}

bool is_section(const std::string& name) {
  for (const Field& f : schema())
    if (f.section == name) return true;
  return false;
}

bool type_matches(FieldType t, const json& v) {
  auto uint_like = [](const json& x) {
    return x.is_number_unsigned() || (x.is_number_integer() && x.get<long long>() >= 0);
  };
  switch (t) {
    case FieldType::kUInt: return uint_like(v);
    case FieldType::kFloat: return v.is_number();
    case FieldType::kBool: return v.is_boolean();
    case FieldType::kString: return v.is_string();
    case FieldType::kUIntList:
      return v.is_array() && std::all_of(v.begin(), v.end(), uint_like);
    case FieldType::kFloatList:
      return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number(); });
    case FieldType::kStringList:
      return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_string(); });
  }
  return false;
}

std::string type_name(FieldType t) {
  switch (t) {
    case FieldType::kUInt: return "a non-negative integer";
    case FieldType::kFloat: return "a number";
    case FieldType::kBool: return "a boolean";
    case FieldType::kString: return "a string";
    case FieldType::kUIntList: return "a list of non-negative integers";
    case FieldType::kFloatList: return "a list of numbers";
    case FieldType::kStringList: return "a list of strings";
  }
  return "?";
}

[[noreturn]] void config_error(const std::string& what) { fail(ErrorCode::kConfig, what); }

// Cross-platform "%.17g".
std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  f << text;
  f.close();
  if (!f) fail(ErrorCode::kIo, "failed writing " + path.string());
}

void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  write_text(tmp, text);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::kIo, "cannot move " + tmp.string() + " into place: " + ec.message());
}

}  // namespace

std::string format_double(double v) { return std::isnan(v) ? std::string() : fmt17(v); }

struct ExperimentConfig::Impl {
  json values = json::object();  // only keys set explicitly, as "section.name" -> value
};

ExperimentConfig::ExperimentConfig() : impl_(std::make_shared<Impl>()) {}

std::shared_ptr<ExperimentConfig::Impl> ExperimentConfig::mutable_impl() {
  auto copy = std::make_shared<Impl>(*impl_);
  impl_ = copy;
  return copy;
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    config_error(std::string("config is not valid JSON: ") + e.what());
  }
  if (doc.is_object() && doc.contains("schema") && doc.contains("config")) doc = doc["config"];
  if (!doc.is_object()) config_error("config must be a JSON object");
  ExperimentConfig cfg;
  auto impl = cfg.mutable_impl();
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (it.value().is_object() && is_section(it.key())) {
      for (auto jt = it.value().begin(); jt != it.value().end(); ++jt) {
        const std::string key = it.key() + "." + jt.key();
        const Field* f = find_field(key);
        if (f == nullptr) config_error("unknown config key '" + key + "'");
        if (!jt.value().is_null() && !type_matches(f->type, jt.value()))
          config_error("'" + key + "' must be " + type_name(f->type));
        impl->values[key] = jt.value();
      }
      continue;
    }
    const Field* f = find_field(it.key());
    if (f == nullptr) config_error("unknown config key '" + it.key() + "'");
    if (!it.value().is_null() && !type_matches(f->type, it.value()))
      config_error("'" + it.key() + "' must be " + type_name(f->type));
    impl->values[it.key()] = it.value();
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) config_error("cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json(ss.str());
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (f == nullptr) config_error("unknown config key '" + key + "'");
  json v;
  try {
    v = json::parse(value);
  } catch (const json::parse_error&) {
    v = value;
  }
  // A bare word such as "bn" is a string; a quoted or numeric-looking value for
  // a string field is kept verbatim.
  if (f->type == FieldType::kString && !v.is_string() && !v.is_null()) v = value;
  if (f->type == FieldType::kStringList && v.is_string()) {
    json list = json::array();
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) list.push_back(item);
    v = list;
  }
  if (!v.is_null() && !type_matches(f->type, v))
    config_error("'" + key + "' must be " + type_name(f->type) + ", got '" + value + "'");
  mutable_impl()->values[key] = v;
}

void ExperimentConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) config_error("--set expects key=value, got '" + assignment + "'");
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

namespace {

json lookup(const json& values, const std::string& key) {
  if (values.contains(key)) return values[key];
  return find_field(key)->fallback;
}

std::size_t first_norm_layer(const NetworkState& net) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerKind k = net.layers[i].spec.kind;
    if (k != LayerKind::kDense && k != LayerKind::kRelu) return i;
  }
  return 0;
}

Model build_model(const ModelSettings& m, std::uint64_t seed, NormKind norm) {
  if (m.kind == ModelKind::kDln) {
    DlnOptions o = m.dln;
    o.seed = seed;
    o.norm = norm;
    return build_dln(o);
  }
  MlpOptions o = m.mlp;
  o.seed = seed;
  o.norm = norm;
  return build_mlp(o);
}

// Resolution also fills in the auto values, so the result can be written
// back out as the resolved config.
Settings resolve_values(const json& values, json* resolved) {
  json full = json::object();
  for (const Field& f : schema()) full[full_key(f)] = lookup(values, full_key(f));
  auto get = [&](const std::string& key) -> const json& { return full[key]; };

  Settings s;
  s.seed = get("seed").get<std::uint64_t>();
  s.out = get("out").get<std::string>();

  const std::string kind = get("model.kind").get<std::string>();
  if (kind != "dln" && kind != "mlp") config_error("model.kind must be dln or mlp, got '" + kind + "'");
  const bool dln = kind == "dln";
  s.model.kind = dln ? ModelKind::kDln : ModelKind::kMlp;
  const auto norm = parse_norm_kind(get("model.norm").get<std::string>());
  if (!norm) config_error("model.norm: unknown normalization '" + get("model.norm").get<std::string>() + "'");
  NoiseConfig noise{get("model.noise_n_mu").get<double>(), get("model.noise_n_sigma").get<double>(),
                    get("model.noise_r_mu").get<double>(), get("model.noise_r_sigma").get<double>()};
  try {
    noise.validate();
  } catch (const Error& e) {
    config_error(std::string("model noise: ") + e.what());
  }
  const double norm_eps = get("model.norm_eps").get<double>();
  if (!(norm_eps >= 0.0)) config_error("model.norm_eps must be >= 0");

  if (full["model.samples"].is_null()) full["model.samples"] = dln ? 1000 : 1024;
  s.model.dln.depth = get("model.depth").get<std::size_t>();
  s.model.dln.dim = get("model.dim").get<std::size_t>();
  s.model.dln.samples = get("model.samples").get<std::size_t>();
  s.model.dln.norm = *norm;
  s.model.dln.norm_last = get("model.norm_last").get<bool>();
  s.model.dln.norm_eps = norm_eps;
  s.model.dln.noise = noise;
  s.model.mlp.dims = get("model.dims").get<std::vector<std::size_t>>();
  s.model.mlp.classes = get("model.classes").get<std::size_t>();
  s.model.mlp.samples = get("model.samples").get<std::size_t>();
  s.model.mlp.separation = get("model.separation").get<double>();
  s.model.mlp.norm = *norm;
  s.model.mlp.norm_eps = norm_eps;
  s.model.mlp.noise = noise;
  if (dln && (s.model.dln.depth == 0 || s.model.dln.dim == 0))
    config_error("model.depth and model.dim must be positive");
  if (s.model.dln.samples < 2) config_error("model.samples must be at least 2");
  if (!dln && (s.model.mlp.dims.size() < 2 || s.model.mlp.classes < 2))
    config_error("model.dims needs at least two widths and model.classes at least 2");

  if (full["train.lr"].is_null()) full["train.lr"] = dln ? 1e-3 : 0.1;
  if (full["train.steps"].is_null()) full["train.steps"] = dln ? 10000 : 1000;
  if (full["train.batch_size"].is_null()) full["train.batch_size"] = dln ? 0 : 128;
  s.train.lr = get("train.lr").get<double>();
  s.train.steps = get("train.steps").get<std::size_t>();
  s.train.batch_size = get("train.batch_size").get<std::size_t>();
  const auto mode = parse_train_mode(get("train.mode").get<std::string>());
  if (!mode) config_error("train.mode must be simultaneous, adjusted or reduced_lr");
  s.train.mode = *mode;
  s.train.bundle_norm_with_dense = get("train.bundle_norm_with_dense").get<bool>();
  s.train.divergence_threshold = get("train.divergence_threshold").get<double>();
  s.train.seed = Rng::mix(s.seed, 4);
  s.divergence_expected = get("train.divergence_expected").get<bool>();
  try {
    s.train.validate();
  } catch (const Error& e) {
    config_error(std::string("train: ") + e.what());
  }
  if (s.train.batch_size > s.model.dln.samples) config_error("train.batch_size exceeds model.samples");

  if (full["instrument.probe_multipliers"].is_null())
    full["instrument.probe_multipliers"] = dln ? default_dln_multipliers() : default_mlp_multipliers();
  s.instrument.ics_every = get("instrument.ics_every").get<std::size_t>();
  s.instrument.probe_every = get("instrument.probe_every").get<std::size_t>();
  s.instrument.probe_multipliers = get("instrument.probe_multipliers").get<std::vector<double>>();
  s.instrument.moments_every = get("instrument.moments_every").get<std::size_t>();
  s.instrument.moments_units = get("instrument.moments_units").get<std::size_t>();
  if (s.instrument.probe_multipliers.empty()) config_error("instrument.probe_multipliers is empty");
  for (std::size_t i = 0; i < s.instrument.probe_multipliers.size(); ++i) {
    const double a = s.instrument.probe_multipliers[i];
    if (!(a > 0.0) || !std::isfinite(a)) config_error("instrument.probe_multipliers must be positive");
    if (i > 0 && a < s.instrument.probe_multipliers[i - 1])
      config_error("instrument.probe_multipliers must be sorted");
  }

  // Structural defaults need the network, so build it once.
  if (full["instrument.moments_layer"].is_null())
    full["instrument.moments_layer"] = first_norm_layer(build_model(s.model, s.seed, *norm).net);
  s.instrument.moments_layer = get("instrument.moments_layer").get<std::size_t>();

  s.verify.seeds = get("verify.seeds").get<std::size_t>();
  s.verify.base_seed = s.seed;
  s.verify.m_min = get("verify.m_min").get<std::size_t>();
  s.verify.m_max = get("verify.m_max").get<std::size_t>();
  s.verify.d_min = get("verify.d_min").get<std::size_t>();
  s.verify.d_max = get("verify.d_max").get<std::size_t>();
  s.verify.lambda = get("verify.lambda").get<double>();
  if (s.verify.m_min < 2 || s.verify.m_min > s.verify.m_max) config_error("verify: need 2 <= m_min <= m_max");
  if (s.verify.d_min < 1 || s.verify.d_min > s.verify.d_max) config_error("verify: need 1 <= d_min <= d_max");
  if (!(s.verify.lambda > 0.0)) config_error("verify.lambda must be positive");

  if (full["compare.seeds"].is_null()) full["compare.seeds"] = json::array({s.seed});
  s.compare.variants = get("compare.variants").get<std::vector<std::string>>();
  s.compare.seeds = get("compare.seeds").get<std::vector<std::uint64_t>>();
  if (s.compare.variants.empty()) config_error("compare.variants is empty");
  for (const std::string& v : s.compare.variants) parse_variant(v);

  if (resolved != nullptr) {
    json out = json::object();
    for (const Field& f : schema()) {
      if (f.section.empty()) out[f.name] = full[full_key(f)];
      else out[f.section][f.name] = full[full_key(f)];
    }
    *resolved = std::move(out);
  }
  return s;
}

}  // namespace

Settings ExperimentConfig::resolve() const { return resolve_values(impl_->values, nullptr); }

std::string ExperimentConfig::resolved_json() const {
  json out;
  resolve_values(impl_->values, &out);
  return out.dump(2);
}

Variant parse_variant(const std::string& name) {
  Variant v;
  v.name = name;
  std::string norm = name, mode;
  if (const auto colon = name.find(':'); colon != std::string::npos) {
    norm = name.substr(0, colon);
    mode = name.substr(colon + 1);
  }
  if (norm == "vanilla") norm = "none";
  if (norm == "adjusted" || norm == "reduced_lr") {
    if (!mode.empty()) config_error("variant '" + name + "': mode given twice");
    mode = norm;
    norm = "none";
  }
  const auto nk = parse_norm_kind(norm);
  if (!nk) config_error("unknown compare variant '" + name + "'");
  v.norm = *nk;
  if (!mode.empty()) {
    const auto m = parse_train_mode(mode);
    if (!m) config_error("unknown training mode in variant '" + name + "'");
    v.mode = *m;
  }
  return v;
}

std::vector<std::string> command_names() { return {"train", "ics", "probe", "verify", "compare"}; }

namespace {

class Csv {
 public:
  explicit Csv(const std::string& header) { text_ << header << '\n'; }
  template <typename... Cells>
  void row(const Cells&... cells) {
    bool first = true;
    ((text_ << (first ? "" : ",") << cell(cells), first = false), ...);
    text_ << '\n';
  }
  std::string str() const { return text_.str(); }

 private:
  static std::string cell(double v) { return format_double(v); }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(const char* v) { return v; }
  static std::string cell(bool v) { return v ? "1" : "0"; }
  template <typename T>
    requires std::is_integral_v<T>
  static std::string cell(T v) {
    return std::to_string(v);
  }
  std::ostringstream text_;
};

struct RunContext {
  fs::path dir;
  RunResult result;
  json divergence = json::object();

  void write(const std::string& name, const std::string& text) {
    write_text(dir / name, text);
    result.artifacts.push_back(name);
  }
};

std::vector<std::size_t> sample_units(std::size_t width, std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> all(width);
  for (std::size_t i = 0; i < width; ++i) all[i] = i;
  Rng rng(Rng::mix(seed, 5));
  for (std::size_t i = width; i > 1; --i) std::swap(all[i - 1], all[rng.below(i)]);
  all.resize(std::min(count, width));
  std::sort(all.begin(), all.end());
  return all;
}

double effective_lr(const Settings& s, const NetworkState& net) {
  if (s.train.mode != TrainMode::kReducedLr) return s.train.lr;
  return s.train.lr / static_cast<double>(net.param_groups(s.train.bundle_norm_with_dense).size());
}

void record_divergence(RunContext& ctx, const TrainTrace& trace) {
  ctx.divergence = {{"diverged", trace.diverged},
                    {"step", trace.diverged ? json(trace.diverged_step) : json(nullptr)},
                    {"reason", trace.divergence_reason}};
}

void add_loss_rows(Csv& csv, const TrainTrace& trace) {
  for (std::size_t t = 0; t < trace.loss.size(); ++t) csv.row(t, trace.loss[t]);
  if (!trace.diverged && !trace.loss.empty()) csv.row(trace.loss.size(), trace.final_loss);
}

void cmd_train(const Settings& s, RunContext& ctx) {
  Model model = build_model(s.model, s.seed, s.model.norm());
  const std::size_t layer = s.instrument.moments_layer;
  if (layer >= model.net.layers.size())
    config_error("instrument.moments_layer " + std::to_string(layer) + " is out of range");
  const std::vector<std::size_t> units =
      sample_units(model.net.layers[layer].spec.out, s.instrument.moments_units, s.seed);
  Csv moments("step,layer,unit,mean,variance");
  Evaluator probe_eval(model.net);
  std::vector<TrainHook> hooks;
  if (s.instrument.moments_every > 0 && !units.empty()) {
    hooks.push_back({s.instrument.moments_every, [&](std::size_t t, const NetworkState& net, const Batch& b) {
                       for (const auto& r : capture_activation_moments(net, probe_eval, b, layer, units, t))
                         moments.row(r.step, r.layer, r.unit, r.mean, r.variance);
                     }});
  }
  const TrainTrace trace = train(model.net, model.data, s.train, hooks);
  Csv loss("step,loss");
  add_loss_rows(loss, trace);
  ctx.write("loss.csv", loss.str());
  ctx.write("moments.csv", moments.str());
  record_divergence(ctx, trace);
  if (trace.diverged && !s.divergence_expected) ctx.result.exit_code = kExitDiverged;
}

void cmd_ics(const Settings& s, RunContext& ctx) {
  Model model = build_model(s.model, s.seed, s.model.norm());
  const double lr = effective_lr(s, model.net);
  Csv ics("step,layer,l2_diff,cos_angle");
  Evaluator probe_eval(model.net);
  std::vector<TrainHook> hooks;
  if (s.instrument.ics_every > 0) {
    hooks.push_back({s.instrument.ics_every, [&](std::size_t t, const NetworkState& net, const Batch& b) {
                       for (const IcsRecord& r :
                            measure_ics(net, probe_eval, b, lr, t, s.train.bundle_norm_with_dense))
                         ics.row(r.step, r.layer, r.l2_diff, r.cos_angle ? fmt17(*r.cos_angle) : std::string());
                     }});
  }
  const TrainTrace trace = train(model.net, model.data, s.train, hooks);
  Csv loss("step,loss");
  add_loss_rows(loss, trace);
  ctx.write("ics.csv", ics.str());
  ctx.write("loss.csv", loss.str());
  record_divergence(ctx, trace);
  if (trace.diverged && !s.divergence_expected) ctx.result.exit_code = kExitDiverged;
}

void cmd_probe(const Settings& s, RunContext& ctx) {
  Model model = build_model(s.model, s.seed, s.model.norm());
  const double lr = effective_lr(s, model.net);
  Csv points("step,multiplier,loss,grad_l2_diff,effective_beta");
  Csv summary(
      "step,base_loss,grad_norm,loss_min,loss_max,loss_median,grad_diff_min,grad_diff_max,"
      "grad_diff_median,effective_beta,non_finite");
  Evaluator probe_eval(model.net);
  std::vector<TrainHook> hooks;
  if (s.instrument.probe_every > 0) {
    hooks.push_back({s.instrument.probe_every, [&](std::size_t t, const NetworkState& net, const Batch& b) {
                       const ProbeReport r =
                           probe_landscape(net, probe_eval, b, lr, s.instrument.probe_multipliers, t);
                       for (std::size_t i = 0; i < r.multipliers.size(); ++i)
                         points.row(t, r.multipliers[i], r.losses[i], r.grad_l2_diffs[i], "");
                       points.row(t, "", r.base_loss, "", r.effective_beta);
                       summary.row(t, r.base_loss, r.grad_norm, r.loss_summary.min, r.loss_summary.max,
                                   r.loss_summary.median, r.grad_diff_summary.min,
                                   r.grad_diff_summary.max, r.grad_diff_summary.median,
                                   r.effective_beta, r.non_finite);
                     }});
  }
  const TrainTrace trace = train(model.net, model.data, s.train, hooks);
  ctx.write("landscape.csv", points.str());
  ctx.write("landscape_summary.csv", summary.str());
  record_divergence(ctx, trace);
  if (trace.diverged && !s.divergence_expected) ctx.result.exit_code = kExitDiverged;
}

json metric_json(const Metric& m) {
  return {{"name", m.name},
          {"value", std::isfinite(m.value) ? json(m.value) : json(nullptr)},
          {"tol", m.tol},
          {"kind", m.is_slack ? "slack" : "residual"},
          {"pass", m.pass()}};
}

void cmd_verify(const Settings& s, RunContext& ctx) {
  const std::vector<CheckReport> reports = run_verification(s.verify);
  json list = json::array();
  std::size_t failed = 0, skipped = 0;
  for (const CheckReport& r : reports) {
    json metrics = json::array();
    for (const Metric& m : r.metrics) metrics.push_back(metric_json(m));
    list.push_back({{"check", r.name},
                    {"seed", r.seed},
                    {"m", r.m},
                    {"d", r.d},
                    {"downstream", r.downstream},
                    {"lhs", r.lhs},
                    {"rhs", r.rhs},
                    {"metrics", metrics},
                    {"skipped", r.skipped},
                    {"note", r.note},
                    {"pass", r.pass()}});
    if (!r.pass()) ++failed;
    if (r.skipped) ++skipped;
  }
  json doc = {{"reports", list},
              {"total", reports.size()},
              {"failed", failed},
              {"skipped", skipped},
              {"pass", failed == 0}};
  ctx.write("verify.json", doc.dump(2) + "\n");
  if (failed > 0) {
    ctx.result.exit_code = kExitVerifyFailed;
    ctx.result.message = std::to_string(failed) + " verification report(s) failed";
  }
}

void cmd_compare(const Settings& s, RunContext& ctx) {
  Csv summary(
      "variant,seed,norm,mode,steps,initial_loss,final_loss,area_under_loss,gradient_evaluations,"
      "diverged,diverged_step");
  json diverged = json::array();
  for (const std::string& name : s.compare.variants) {
    const Variant v = parse_variant(name);
    for (std::uint64_t seed : s.compare.seeds) {
      Model model = build_model(s.model, seed, v.norm);
      TrainConfig tc = s.train;
      tc.mode = v.mode;
      tc.seed = Rng::mix(seed, 4);
      const TrainTrace trace = train(model.net, model.data, tc);
      double area = 0.0;
      for (double l : trace.loss) area += l;
      summary.row(name, seed, norm_kind_name(v.norm), train_mode_name(v.mode), tc.steps, trace.initial_loss,
                  trace.final_loss, trace.diverged ? std::numeric_limits<double>::infinity() : area,
                  trace.gradient_evaluations, trace.diverged,
                  trace.diverged ? std::to_string(trace.diverged_step) : std::string());
      if (trace.diverged)
        diverged.push_back({{"variant", name}, {"seed", seed}, {"step", trace.diverged_step},
                            {"reason", trace.divergence_reason}});
    }
  }
  ctx.write("summary.csv", summary.str());
  ctx.divergence = {{"diverged", !diverged.empty()}, {"runs", diverged}};
}

}  // namespace

RunResult run_command(const std::string& command, const ExperimentConfig& config, const fs::path& out_dir) {
  const auto names = command_names();
  if (std::find(names.begin(), names.end(), command) == names.end())
    config_error("unknown command '" + command + "'");
  json resolved;
  const json values = json::parse(config.resolved_json());
  const Settings s = config.resolve();
  resolved = values;

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create output directory " + out_dir.string() + ": " + ec.message());

  RunContext ctx;
  ctx.dir = out_dir;
  const auto start = std::chrono::steady_clock::now();
  if (command == "train") cmd_train(s, ctx);
  else if (command == "ics") cmd_ics(s, ctx);
  else if (command == "probe") cmd_probe(s, ctx);
  else if (command == "verify") cmd_verify(s, ctx);
  else cmd_compare(s, ctx);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  json manifest = {{"schema", kManifestSchema},
                   {"command", command},
                   {"version", BNLAB_VERSION},
                   {"config", resolved},
                   {"artifacts", ctx.result.artifacts},
                   {"wall_clock_seconds", wall},
                   {"divergence", ctx.divergence},
                   {"exit_code", ctx.result.exit_code}};
  write_atomic(out_dir / "manifest.json", manifest.dump(2) + "\n");
  ctx.result.artifacts.push_back("manifest.json");
  return ctx.result;
}

}  // namespace bnlab
