// Copyright (c) 2026 demmamba authors
// SPDX-License-Identifier: Apache-2.0
//
// Training machinery: the L1 + feature-space loss, a fixed seeded conv
// pyramid standing in for a pretrained feature extractor, AdamW with a
// multistep schedule, the batched train step, and the scan benchmark.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "demmamba/common.hpp"
#include "demmamba/metrics.hpp"
#include "demmamba/model.hpp"
#include "demmamba/ssm.hpp"
#include "demmamba/synth.hpp"

namespace demmamba {

struct TrainConfig {
  double lr0 = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.01;
  std::int64_t batch_size = 2;
  std::int64_t epochs = 50;
  std::vector<std::int64_t> milestones = {30, 40};
  double decay = 0.5;
  double l1_weight = 1.0;
  double feature_weight = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    require(lr0 > 0.0, "learning rate must be positive");
    require(batch_size >= 1 && epochs >= 0, "batch size and epochs must be non-negative");
    for (std::size_t i = 1; i < milestones.size(); ++i) {
      require(milestones[i] > milestones[i - 1], "milestones must increase strictly");
    }
  }
};

/// lr0 * decay^k where k counts milestones at or before the epoch.
inline double multistep_lr(std::int64_t epoch, const TrainConfig& cfg) {
  int k = 0;
  for (auto m : cfg.milestones) {
    if (m <= epoch) ++k;
  }
  return cfg.lr0 * std::pow(cfg.decay, k);
}

/// Fixed, seed-initialized, non-trainable three-stage strided conv pyramid
/// used for the feature-matching half of the loss.
template <typename T>
struct FeatureExtractor {
  std::vector<Tensor<T>> ws, bs;

  explicit FeatureExtractor(std::uint64_t seed = 977) {
    Rng rng(seed);
    std::int64_t chans[4] = {3, 8, 16, 32};
    for (int s = 0; s < 3; ++s) {
      std::int64_t cin = chans[s], cout = chans[s + 1];
      double bound = 1.0 / std::sqrt(static_cast<double>(cin * 9));
      ws.push_back(Tensor<T>::uniform({cout, cin, 3, 3}, rng, bound, false));
      bs.push_back(Tensor<T>::uniform({cout}, rng, bound, false));
    }
  }

  /// [B,3,H,W] -> one feature map per pyramid stage (stride-2 each).
  std::vector<Tensor<T>> forward(const Tensor<T>& img) const {
    std::vector<Tensor<T>> stages;
    auto x = img;
    for (std::size_t s = 0; s < ws.size(); ++s) {
      x = silu(conv2d(x, ws[s], bs[s], 2, 1));
      stages.push_back(x);
    }
    return stages;
  }
};

/// Mean L1 on pixels plus mean L1 per feature stage.
template <typename T>
Tensor<T> loss_total(const Tensor<T>& pred, const Tensor<T>& gt, const FeatureExtractor<T>& fx,
                     double l1_weight = 1.0, double feature_weight = 1.0) {
  require(pred.shape() == gt.shape(), "loss inputs must share a shape");
  require(pred.rank() == 3 && pred.dim(0) == 3, "loss inputs must be [3,H,W]");
  auto loss = scale(mean(demmamba::abs(sub(pred, gt))), static_cast<T>(l1_weight));
  if (feature_weight != 0.0) {
    auto p4 = reshape(pred, {1, 3, pred.dim(1), pred.dim(2)});
    auto g4 = reshape(gt, {1, 3, gt.dim(1), gt.dim(2)});
    auto fp = fx.forward(p4);
    auto fg = fx.forward(g4);
    for (std::size_t s = 0; s < fp.size(); ++s) {
      loss = add(loss, scale(mean(demmamba::abs(sub(fp[s], fg[s]))), static_cast<T>(feature_weight)));
    }
  }
  return loss;
}

/// Decoupled-weight-decay Adam over a fixed parameter list.
template <typename T>
struct AdamW {
  std::vector<Tensor<T>> params;
  std::vector<std::vector<double>> m, v;
  std::int64_t t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;

  AdamW() = default;
  AdamW(std::vector<Tensor<T>> params_, const TrainConfig& cfg)
      : params(std::move(params_)), beta1(cfg.beta1), beta2(cfg.beta2),
        weight_decay(cfg.weight_decay) {
    for (auto& p : params) {
      m.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
      v.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params) p.zero_grad();
  }

  /// One update from the gradients currently stored on the parameters.
  void step(double lr) {
    ++t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      const auto& g = p.grad();
      T* w = p.data();
      for (std::int64_t j = 0; j < p.numel(); ++j) {
        double gj = static_cast<double>(g[static_cast<std::size_t>(j)]);
        double& mj = m[i][static_cast<std::size_t>(j)];
        double& vj = v[i][static_cast<std::size_t>(j)];
        mj = beta1 * mj + (1.0 - beta1) * gj;
        vj = beta2 * vj + (1.0 - beta2) * gj * gj;
        double update = lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps);
        double decayed = static_cast<double>(w[j]) * (1.0 - lr * weight_decay);
        w[j] = static_cast<T>(decayed - update);
      }
    }
  }
};

/// Clamp to [0,1]; evaluation-side only, never part of the training graph.
template <typename T>
Tensor<T> clamp01(const Tensor<T>& x) {
  auto out = x.detach_copy();
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    out.data()[i] = std::min(T(1), std::max(T(0), out.data()[i]));
  }
  return out;
}

struct StepRecord {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double psnr = 0.0;
};

/// Owns the optimizer state and step counter for one training run.
template <typename T>
class Trainer {
 public:
  Trainer(DemMamba<T>& model, const TrainConfig& cfg, std::int64_t start_step = 0)
      : model_(model), cfg_(cfg), fx_(977), rng_(cfg.seed ^ 0x5eedULL), step_(start_step) {
    cfg_.validate();
    std::vector<Tensor<T>> leaves;
    for (auto& p : model.parameters()) leaves.push_back(p.tensor);
    opt_ = AdamW<T>(std::move(leaves), cfg_);
  }

  /// One batched optimization step.  Throws OverflowError if the loss goes
  /// non-finite (numerical failure).
  StepRecord train_step(const std::vector<const synth::ClipData*>& batch, std::int64_t epoch) {
    opt_.zero_grad();
    Tensor<T> loss;
    double psnr_acc = 0.0;
    std::int64_t center = model_.cfg.frames / 2;
    for (const auto* clip : batch) {
      auto raw = clip->raw.template cast<T>();
      auto pred = model_.forward(raw);
      auto gt_all = clip->clean.template cast<T>();
      auto gt = Tensor<T>::from_data(
          std::vector<T>(gt_all.data() + center * 3 * raw.dim(1) * raw.dim(2),
                         gt_all.data() + (center + 1) * 3 * raw.dim(1) * raw.dim(2)),
          {3, raw.dim(1), raw.dim(2)});
      auto l = loss_total(pred, gt, fx_, cfg_.l1_weight, cfg_.feature_weight);
      loss = loss.defined() ? add(loss, l) : l;
      psnr_acc += psnr(clamp01(pred), gt);
    }
    loss = scale(loss, T(1) / static_cast<T>(batch.size()));
    double loss_v = static_cast<double>(loss.item());
    if (!std::isfinite(loss_v)) throw OverflowError("training loss went non-finite");
    loss.backward();
    double lr = multistep_lr(epoch, cfg_);
    opt_.step(lr);
    ++step_;
    return {step_, epoch, lr, loss_v, psnr_acc / static_cast<double>(batch.size())};
  }

  /// Epoch loop with shuffled batches.  step_cb runs after every step;
  /// epoch_cb after every epoch.  A positive max_steps caps the run.
  /// epoch_offset continues a resumed run's schedule.
  template <typename StepCb, typename EpochCb>
  void run(const std::vector<synth::ClipData>& clips, std::int64_t epochs, std::int64_t max_steps,
           StepCb&& step_cb, EpochCb&& epoch_cb, std::int64_t epoch_offset = 0) {
    require(!clips.empty(), "training needs at least one clip");
    std::vector<std::size_t> order(clips.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::int64_t e = epoch_offset; e < epochs; ++e) {
      rng_.shuffle(order);
      for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg_.batch_size)) {
        if (max_steps > 0 && step_ >= max_steps) return;
        std::vector<const synth::ClipData*> batch;
        for (std::size_t j = i; j < order.size() && batch.size() < static_cast<std::size_t>(cfg_.batch_size); ++j) {
          batch.push_back(&clips[order[j]]);
        }
        step_cb(train_step(batch, e));
      }
      epoch_cb(e);
    }
  }

  std::int64_t steps_done() const { return step_; }
  const FeatureExtractor<T>& features() const { return fx_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  DemMamba<T>& model_;
  TrainConfig cfg_;
  FeatureExtractor<T> fx_;
  AdamW<T> opt_;
  Rng rng_;
  std::int64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Scan benchmark

struct BenchRow {
  std::int64_t length = 0;
  double mean_seconds = 0.0;    // parallel scan
  double seq_seconds = 0.0;     // sequential scan, for reference
  double slope = 0.0;           // shared fitted log-log slope
};

/// Times the parallel scan across lengths, checks it against the sequential
/// scan while timed, and fits the log-log slope.  inject_fault corrupts one
/// output to exercise the equivalence guard; a failure message lands in
/// *error when provided, otherwise throws.
inline std::vector<BenchRow> bench_scan(const std::vector<std::int64_t>& lengths, int trials,
                                        bool inject_fault = false, std::string* error = nullptr) {
  require(!lengths.empty() && trials >= 1, "bench_scan needs lengths and trials");
  for (std::size_t i = 1; i < lengths.size(); ++i) {
    require(lengths[i] > lengths[i - 1], "bench lengths must ascend");
  }
  const std::int64_t C = 8, N = 8;
  std::vector<BenchRow> rows;
  Rng rng(20260808);
  bool warmed = false;
  for (auto L : lengths) {
    ssm::SSMParams<double> p;
    p.channels = C;
    p.state_size = N;
    p.selective = true;
    p.seq_len = L;
    p.A.resize(static_cast<std::size_t>(C * N));
    for (auto& v : p.A) v = rng.uniform(-3.0, -0.1);
    p.B.resize(static_cast<std::size_t>(L * C * N));
    p.Cc.resize(p.B.size());
    for (auto& v : p.B) v = rng.uniform(-1.0, 1.0);
    for (auto& v : p.Cc) v = rng.uniform(-1.0, 1.0);
    p.D.resize(static_cast<std::size_t>(C));
    for (auto& v : p.D) v = rng.uniform(-1.0, 1.0);
    p.dt.resize(static_cast<std::size_t>(L * C));
    for (auto& v : p.dt) v = rng.uniform(0.05, 0.5);
    std::vector<double> x(static_cast<std::size_t>(L * C));
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);

    ssm::ScanResult<double> par, seq;
    if (!warmed) {  // touch code and allocator paths before the first timing
      (void)ssm::parallel_scan(p, x);
      (void)ssm::selective_scan(p, x);
      warmed = true;
    }
    double par_total = 0.0, seq_total = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
      auto t0 = std::chrono::steady_clock::now();
      par = ssm::parallel_scan(p, x);
      auto t1 = std::chrono::steady_clock::now();
      seq = ssm::selective_scan(p, x);
      auto t2 = std::chrono::steady_clock::now();
      par_total += std::chrono::duration<double>(t1 - t0).count();
      seq_total += std::chrono::duration<double>(t2 - t1).count();
    }
    if (inject_fault) par.y[par.y.size() / 2] += 1.0;
    double worst = 0.0;
    for (std::size_t i = 0; i < par.y.size(); ++i) {
      worst = std::max(worst, std::fabs(par.y[i] - seq.y[i]));
    }
    if (worst > 1e-6) {
      std::string msg = "parallel/sequential scan mismatch at L=" + std::to_string(L) +
                        " (max abs diff " + std::to_string(worst) + ")";
      if (error != nullptr) {
        *error = msg;
        return {};
      }
      throw OverflowError(msg);
    }
    BenchRow row;
    row.length = L;
    row.mean_seconds = par_total / trials;
    row.seq_seconds = seq_total / trials;
    rows.push_back(row);
  }
  // least-squares slope of log(time) vs log(L)
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& r : rows) {
    double lx = std::log(static_cast<double>(r.length));
    double ly = std::log(std::max(r.mean_seconds, 1e-12));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  double n = static_cast<double>(rows.size());
  double slope = rows.size() > 1 ? (n * sxy - sx * sy) / (n * sxx - sx * sx) : 1.0;
  for (auto& r : rows) r.slope = slope;
  return rows;
}

}  // namespace demmamba
