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

#include "bnlab/instrumentation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bnlab {
namespace {

double l2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

std::vector<IcsRecord> measure_ics(const NetworkState& net, Evaluator& eval, const Batch& batch,
                                   double lr, std::size_t step, bool bundle_norm_with_dense) {
  BNLAB_REQUIRE(std::isfinite(lr) && lr >= 0.0, ErrorCode::kInvalidArgument, "measure_ics: lr must be >= 0");
  const std::vector<ParamGroup> groups = net.param_groups(bundle_norm_with_dense);
  ParamGrads g;
  eval.loss_and_grad(net, batch, step, g);

  NetworkState shifted = net;
  ParamGrads g_prime;
  std::vector<IcsRecord> out;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const std::vector<double> gi = flatten_group(g, groups[i]);
    std::vector<double> gpi = gi;
    if (i > 0) {
      shifted.apply_update(g, lr, &groups[i - 1]);
      eval.loss_and_grad(shifted, batch, step, g_prime, &groups[i]);
      gpi = flatten_group(g_prime, groups[i]);
    }
    IcsRecord r;
    r.step = step;
    r.layer = i;
    double diff = 0.0, dot = 0.0;
    for (std::size_t k = 0; k < gi.size(); ++k) {
      diff += (gi[k] - gpi[k]) * (gi[k] - gpi[k]);
      dot += gi[k] * gpi[k];
    }
    r.l2_diff = std::sqrt(diff);
    const double na = l2(gi), nb = l2(gpi);
    if (na > 0.0 && nb > 0.0) r.cos_angle = diff == 0.0 ? 1.0 : std::clamp(dot / (na * nb), -1.0, 1.0);
    out.push_back(r);
  }
  return out;
}

std::vector<IcsRecord> measure_ics(const NetworkState& net, const Batch& batch, double lr,
                                   std::size_t step, bool bundle_norm_with_dense) {
  Evaluator eval(net);
  return measure_ics(net, eval, batch, lr, step, bundle_norm_with_dense);
}

std::vector<double> default_dln_multipliers() {
  std::vector<double> out;
  const double lo = std::log(0.01), hi = std::log(30.0);
  for (int i = 0; i < 20; ++i) out.push_back(std::exp(lo + (hi - lo) * i / 19.0));
  out.front() = 0.01;
  out.back() = 30.0;
  return out;
}

std::vector<double> default_mlp_multipliers() {
  std::vector<double> out;
  for (int i = 0; i < 8; ++i) out.push_back(0.5 + 3.5 * i / 7.0);
  return out;
}

Summary summarize(std::vector<double> values) {
  std::erase_if(values, [](double x) { return !std::isfinite(x); });
  if (values.empty()) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {nan, nan, nan};
  }
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  const double median = n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  return {values.front(), values.back(), median};
}

ProbeReport probe_landscape(const Objective& objective, std::span<const double> theta, double lr,
                            std::span<const double> multipliers) {
  BNLAB_REQUIRE(std::isfinite(lr) && lr > 0.0, ErrorCode::kInvalidArgument, "probe: lr must be positive");
  BNLAB_REQUIRE(!multipliers.empty(), ErrorCode::kInvalidArgument, "probe: no multipliers");
  for (std::size_t i = 0; i < multipliers.size(); ++i) {
    BNLAB_REQUIRE(std::isfinite(multipliers[i]) && multipliers[i] > 0.0, ErrorCode::kInvalidArgument,
            "probe: multipliers must be positive");
    BNLAB_REQUIRE(i == 0 || multipliers[i] >= multipliers[i - 1], ErrorCode::kInvalidArgument,
            "probe: multipliers must be sorted");
  }
  ProbeReport rep;
  rep.lr = lr;
  rep.multipliers.assign(multipliers.begin(), multipliers.end());
  std::vector<double> g;
  rep.base_loss = objective(theta, &g);
  BNLAB_REQUIRE(g.size() == theta.size(), ErrorCode::kShapeMismatch, "probe: gradient length");
  BNLAB_REQUIRE(std::isfinite(rep.base_loss) && all_finite(g), ErrorCode::kNonFinite,
          "probe: non-finite loss or gradient at the base point");
  rep.grad_norm = l2(g);

  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> moved(theta.size()), g2;
  for (double alpha : multipliers) {
    const double s = alpha * lr;
    for (std::size_t k = 0; k < theta.size(); ++k) moved[k] = theta[k] - s * g[k];
    double loss = nan;
    bool ok = true;
    try {
      loss = objective(moved, &g2);
      ok = std::isfinite(loss) && g2.size() == g.size() && all_finite(g2);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNonFinite && e.code() != ErrorCode::kPrecondition) throw;
      ok = false;
    }
    if (!ok) {
      ++rep.non_finite;
      rep.losses.push_back(nan);
      rep.grad_l2_diffs.push_back(nan);
      continue;
    }
    double diff = 0.0, dist = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      diff += (g2[k] - g[k]) * (g2[k] - g[k]);
      const double d = moved[k] - theta[k];
      dist += d * d;
    }
    diff = std::sqrt(diff);
    dist = std::sqrt(dist);
    rep.losses.push_back(loss);
    rep.grad_l2_diffs.push_back(diff);
    if (dist > 0.0) rep.effective_beta = std::max(rep.effective_beta, diff / dist);
  }
  rep.loss_summary = summarize(rep.losses);
  rep.grad_diff_summary = summarize(rep.grad_l2_diffs);
  return rep;
}

ProbeReport probe_landscape(const NetworkState& net, Evaluator& eval, const Batch& batch,
                            double lr, std::span<const double> multipliers, std::size_t step) {
  NetworkState scratch = net;
  ParamGrads grads;
  Objective fn = [&](std::span<const double> theta, std::vector<double>* grad) {
    scratch.unflatten(theta);
    if (grad == nullptr) return eval.loss(scratch, batch, step);
    const double loss = eval.loss_and_grad(scratch, batch, step, grads);
    *grad = flatten_grads(grads);
    return loss;
  };
  const std::vector<double> theta = net.flatten();
  ProbeReport rep = probe_landscape(fn, theta, lr, multipliers);
  rep.step = step;
  return rep;
}

std::vector<ActivationMomentRecord> capture_activation_moments(
    const NetworkState& net, Evaluator& eval, const Batch& batch, std::size_t layer,
    std::span<const std::size_t> units, std::size_t step) {
  BNLAB_REQUIRE(layer < net.layers.size(), ErrorCode::kInvalidArgument, "moments: layer out of range");
  eval.loss(net, batch, step);
  const Tensor& out = eval.layer_output(layer);
  std::vector<ActivationMomentRecord> recs;
  for (std::size_t u : units) {
    BNLAB_REQUIRE(u < out.cols(), ErrorCode::kInvalidArgument, "moments: unit index out of range");
    const std::size_t m = out.rows();
    double mean = 0.0;
    for (std::size_t b = 0; b < m; ++b) mean += out(b, u);
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t b = 0; b < m; ++b) var += (out(b, u) - mean) * (out(b, u) - mean);
    var /= static_cast<double>(m);
    recs.push_back({step, layer, u, mean, var});
  }
  return recs;
}

std::vector<ActivationMomentRecord> capture_activation_moments(
    const NetworkState& net, const Batch& batch, std::size_t layer,
    std::span<const std::size_t> units, std::size_t step) {
  Evaluator eval(net);
  return capture_activation_moments(net, eval, batch, layer, units, step);
}

}  // namespace bnlab
