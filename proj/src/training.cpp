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

#include "bnlab/training.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace bnlab {

std::string train_mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::kSimultaneous: return "simultaneous";
    case TrainMode::kAdjusted: return "adjusted";
    case TrainMode::kReducedLr: return "reduced_lr";
  }
  return "?";
}

std::optional<TrainMode> parse_train_mode(const std::string& name) {
  for (TrainMode m : {TrainMode::kSimultaneous, TrainMode::kAdjusted, TrainMode::kReducedLr})
    if (train_mode_name(m) == name) return m;
  return std::nullopt;
}

void TrainConfig::validate() const {
  BNLAB_REQUIRE(std::isfinite(lr) && lr >= 0.0, ErrorCode::kConfig, "lr must be a finite number >= 0");
  BNLAB_REQUIRE(divergence_threshold > 0.0, ErrorCode::kConfig, "divergence threshold must be positive");
}

StepResult step_simultaneous(NetworkState& net, Evaluator& eval, const Batch& batch, double lr,
                             std::size_t step, bool bundle_norm_with_dense) {
  ParamGrads grads;
  StepResult r;
  r.loss = eval.loss_and_grad(net, batch, step, grads);
  r.snapshot.step = step;
  for (const ParamGroup& g : net.param_groups(bundle_norm_with_dense))
    r.snapshot.groups.push_back(flatten_group(grads, g));
  net.apply_update(grads, lr);
  return r;
}

StepResult step_adjusted(NetworkState& net, Evaluator& eval, const Batch& batch, double lr,
                         std::size_t step, bool bundle_norm_with_dense) {
  ParamGrads grads;
  StepResult r;
  r.snapshot.step = step;
  const std::vector<ParamGroup> groups = net.param_groups(bundle_norm_with_dense);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const double loss = eval.loss_and_grad(net, batch, step, grads, &groups[i]);
    if (i == 0) r.loss = loss;
    net.apply_update(grads, lr, &groups[i]);
  }
  return r;
}

BatchSampler::BatchSampler(std::size_t rows, std::size_t batch_size, std::uint64_t seed)
    : rows_(rows), batch_size_(batch_size), rng_(seed), order_(rows) {
  BNLAB_REQUIRE(rows >= 1 && batch_size >= 1 && batch_size <= rows, ErrorCode::kConfig,
          "batch size must be in [1, " + std::to_string(rows) + "]");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  reshuffle();
}

void BatchSampler::reshuffle() {
  for (std::size_t i = rows_; i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
  cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next() {
  if (cursor_ + batch_size_ > rows_) reshuffle();
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_size_));
  cursor_ += batch_size_;
  return out;
}

TrainTrace train(NetworkState& net, const Dataset& data, const TrainConfig& cfg,
                 const std::vector<TrainHook>& hooks) {
  cfg.validate();
  net.validate();
  TrainTrace trace;

  Evaluator eval(net);
  const bool full = cfg.batch_size == 0 || cfg.batch_size >= data.all.rows();
  std::optional<BatchSampler> sampler;
  if (!full) sampler.emplace(data.all.rows(), cfg.batch_size, cfg.seed);
  double lr = cfg.lr;
  if (cfg.mode == TrainMode::kReducedLr)
    lr /= static_cast<double>(net.param_groups(cfg.bundle_norm_with_dense).size());

  auto run_hooks = [&](std::size_t t, const Batch& batch) {
    for (const TrainHook& h : hooks)
      if (h.fn && h.every > 0 && t % h.every == 0) h.fn(t, net, batch);
  };
  auto flag = [&](std::size_t t, std::string why) {
    trace.diverged = true;
    trace.diverged_step = t;
    trace.divergence_reason = std::move(why);
  };

  try {
    trace.initial_loss = eval.loss(net, data.all, 0);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNonFinite) throw;
    flag(0, e.what());
    trace.final_loss = trace.initial_loss = std::numeric_limits<double>::infinity();
    return trace;
  }

  Batch mini;
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    if (!full) {
      const std::vector<std::size_t> idx = sampler->next();
      mini = data.rows(idx);
    }
    const Batch& batch = full ? data.all : mini;
    run_hooks(t, batch);
    StepResult r;
    try {
      r = cfg.mode == TrainMode::kAdjusted
              ? step_adjusted(net, eval, batch, lr, t, cfg.bundle_norm_with_dense)
              : step_simultaneous(net, eval, batch, lr, t, cfg.bundle_norm_with_dense);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNonFinite) throw;
      flag(t, e.what());
      break;
    }
    trace.loss.push_back(r.loss);
    if (r.loss > cfg.divergence_threshold) {
      flag(t, "loss exceeded divergence threshold");
      break;
    }
    if (cfg.snapshot_every > 0 && t % cfg.snapshot_every == 0 && !r.snapshot.groups.empty())
      trace.snapshots.push_back(std::move(r.snapshot));
  }

  if (!trace.diverged) {
    try {
      trace.final_loss = eval.loss(net, data.all, cfg.steps);
      if (trace.final_loss > cfg.divergence_threshold)
        flag(cfg.steps, "loss exceeded divergence threshold");
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNonFinite) throw;
      flag(cfg.steps, e.what());
    }
    if (!trace.diverged) run_hooks(cfg.steps, data.all);
  }
  if (trace.diverged) trace.final_loss = std::numeric_limits<double>::infinity();
  trace.gradient_evaluations = eval.gradient_evaluations();
  return trace;
}

}  // namespace bnlab
