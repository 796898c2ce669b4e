#pragma once

#include <algorithm>
#include <array>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "stcl/dataflow.hpp"
#include "stcl/model.hpp"
#include "stcl/optim.hpp"

namespace stcl {

struct TrainConfig {
  size_t batch_size = 64;
  long warmup = 4000;
  size_t max_epochs = 50;
  uint64_t seed = 1;
  double eval_region_threshold = 10.0;  // regions below this mean flow are not scored
  size_t steps_per_epoch = 0;           // 0 = full pass over the windows
  double validation_fraction = 0.1;     // tail of the training range held out

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (warmup < 1) throw ConfigError("train: warmup must be >= 1");
    if (validation_fraction < 0 || validation_fraction >= 1)
      throw ConfigError("train: validation_fraction must be in [0,1)");
  }
};

struct LossTraceRow {
  long step;
  double lr;
  double loss;
};

struct EvalReport {
  double rmse_in = 0, rmse_out = 0, mae_in = 0, mae_out = 0;
  size_t regions_evaluated = 0;
  size_t samples = 0;
  // region -> per-channel (sum sq err, sum abs err, count)
  std::map<size_t, std::array<double, 6>> per_region;
};

inline ParamStore clone_params(const ParamStore& src) {
  ParamStore out;
  for (const auto& [name, t] : src)
    out.add(name, Tensor::from(t.shape(), t.data()));
  return out;
}

inline void copy_params_into(const ParamStore& src, ParamStore& dst) {
  for (const auto& [name, t] : src) dst.get(name).mutable_data() = t.data();
}

// ---- training loop ---------------------------------------------------------

struct TrainResult {
  std::vector<LossTraceRow> trace;
  long steps = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

namespace detail {

inline double validation_loss(const ParamStore& params, const ModelConfig& cfg,
                              const std::vector<SampleWindow>& windows,
                              RngStream& rng) {
  if (windows.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0;
  for (const auto& w : windows) {
    Tape tape;
    Tensor yhat = stcl_forward(tape, w, params, cfg, Mode::kEval, rng);
    for (size_t c = 0; c < 2; ++c) {
      double r = yhat.at({0, c}) - w.target.data()[c];
      total += r * r;
    }
  }
  return total / (windows.size() * 2);
}

}  // namespace detail

// Seeded shuffle-batch Adam/Noam loop. If `val` is non-empty, the parameters
// that scored best on it are restored before returning.
inline TrainResult train(ParamStore& params, const std::vector<SampleWindow>& windows,
                         const ModelConfig& mcfg, const TrainConfig& tcfg,
                         const std::vector<SampleWindow>& val = {}) {
  mcfg.validate();
  tcfg.validate();
  if (windows.empty()) throw ConfigError("train: no training windows");
  RngStream shuffle_rng(tcfg.seed, 100);
  RngStream dropout_rng(tcfg.seed, 101);
  RngStream val_rng(tcfg.seed, 102);
  AdamState adam;
  TrainResult result;
  ParamStore best = clone_params(params);
  std::vector<size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);
  long step = 0;
  for (size_t epoch = 0; epoch < tcfg.max_epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.next_index(i)]);
    size_t epoch_windows = order.size();
    if (tcfg.steps_per_epoch > 0)
      epoch_windows = std::min(epoch_windows, tcfg.steps_per_epoch * tcfg.batch_size);
    for (size_t start = 0; start < epoch_windows; start += tcfg.batch_size) {
      size_t bsz = std::min(tcfg.batch_size, epoch_windows - start);
      params.zero_grads();
      double batch_loss = 0;
      for (size_t b = 0; b < bsz; ++b) {
        const SampleWindow& w = windows[order[start + b]];
        Tape tape;
        Tensor yhat = stcl_forward(tape, w, params, mcfg, Mode::kTrain, dropout_rng);
        Tensor target = Tensor::from({1, 2}, {w.target.data()[0], w.target.data()[1]});
        Tensor sample_loss = mse_mean(tape, yhat, target);
        batch_loss += sample_loss.value();
        Tensor scaled = scale(tape, sample_loss, 1.0 / bsz);
        tape.backward(scaled);
      }
      batch_loss /= bsz;
      if (!std::isfinite(batch_loss))
        throw NumericalError("train: non-finite loss at step " + std::to_string(step + 1));
      ++step;
      double lr = noam_lr(step, static_cast<int>(mcfg.d_model), tcfg.warmup);
      adam_step(params, adam, lr);
      result.trace.push_back({step, lr, batch_loss});
    }
    if (!val.empty()) {
      double vl = detail::validation_loss(params, mcfg, val, val_rng);
      if (vl < result.best_val_loss) {
        result.best_val_loss = vl;
        copy_params_into(params, best);
      }
    }
  }
  result.steps = step;
  if (!val.empty()) copy_params_into(best, params);
  return result;
}

// ---- evaluation ------------------------------------------------------------

// Mean raw flow per region over the training range; used for the evaluation
// threshold filter.
inline std::vector<double> region_mean_flow(const Tensor& flow_raw, const GridSpec& grid,
                                            const IntervalRange& train_range) {
  std::vector<double> means(grid.regions(), 0.0);
  const auto& v = flow_raw.data();
  const size_t T = grid.num_intervals;
  for (size_t r = 0; r < grid.regions(); ++r) {
    double s = 0;
    for (size_t t = train_range.begin; t < train_range.end; ++t)
      s += (v[(r * T + t) * 2] + v[(r * T + t) * 2 + 1]) / 2.0;
    means[r] = s / train_range.length();
  }
  return means;
}

// Generic single-step predictor interface used so the deep model and the
// baselines share one metric path. Returns scaled or raw values depending on
// `scaled_units`; evaluate() denormalizes scaled predictors internally.
using Predictor = std::function<std::array<double, 2>(const SampleWindow&)>;

inline EvalReport evaluate(const Predictor& predict, bool predictor_is_scaled,
                           const std::vector<SampleWindow>& test_windows,
                           const ScalerParams& flow_scaler,
                           const std::vector<double>& region_means,
                           double region_threshold) {
  if (test_windows.empty()) throw ConfigError("evaluate: empty test set");
  EvalReport rep;
  double sq[2] = {0, 0}, ab[2] = {0, 0};
  size_t n = 0;
  for (const auto& w : test_windows) {
    if (region_means[w.region] < region_threshold) continue;
    auto yhat = predict(w);
    for (size_t c = 0; c < 2; ++c) {
      double pred = predictor_is_scaled ? minmax_invert_value(yhat[c], flow_scaler, c)
                                        : yhat[c];
      double truth = minmax_invert_value(w.target.data()[c], flow_scaler, c);
      double r = pred - truth;
      sq[c] += r * r;
      ab[c] += std::abs(r);
      auto& pr = rep.per_region[w.region];
      pr[c * 3 + 0] += r * r;
      pr[c * 3 + 1] += std::abs(r);
      pr[c * 3 + 2] += 1;
    }
    ++n;
  }
  if (n == 0)
    throw ConfigError("evaluate: region threshold excluded every window");
  rep.samples = n;
  rep.regions_evaluated = rep.per_region.size();
  rep.rmse_in = std::sqrt(sq[0] / n);
  rep.rmse_out = std::sqrt(sq[1] / n);
  rep.mae_in = ab[0] / n;
  rep.mae_out = ab[1] / n;
  return rep;
}

inline Predictor make_stcl_predictor(const ParamStore& params, const ModelConfig& cfg,
                                     uint64_t seed) {
  auto rng = std::make_shared<RngStream>(seed, 200);
  return [&params, cfg, rng](const SampleWindow& w) -> std::array<double, 2> {
    Tape tape;
    Tensor yhat = stcl_forward(tape, w, params, cfg, Mode::kEval, *rng);
    return {yhat.at({0, 0}), yhat.at({0, 1})};
  };
}

// ---- HA baseline -----------------------------------------------------------

// Historical average of the same (interval-of-day, day-of-week) weekly slot,
// per region and channel, fit on the training range of the raw flow cube.
class HaBaseline {
 public:
  HaBaseline(const Tensor& flow_raw, const GridSpec& grid, const IntervalRange& train)
      : grid_(grid) {
    const auto& v = flow_raw.data();
    const size_t T = grid.num_intervals;
    const int z = grid.intervals_per_day();
    slot_sum_.assign(grid.regions() * z * 7 * 2, 0.0);
    slot_count_.assign(grid.regions() * z * 7, 0);
    region_sum_.assign(grid.regions() * 2, 0.0);
    region_count_ = train.length();
    for (size_t r = 0; r < grid_.regions(); ++r)
      for (size_t t = train.begin; t < train.end; ++t) {
        size_t slot = static_cast<size_t>(grid.interval_of_day(t)) * 7 +
                      static_cast<size_t>(grid.day_of_week(t));
        for (size_t c = 0; c < 2; ++c) {
          slot_sum_[(r * z * 7 + slot) * 2 + c] += v[(r * T + t) * 2 + c];
          region_sum_[r * 2 + c] += v[(r * T + t) * 2 + c];
        }
        ++slot_count_[r * z * 7 + slot];
      }
  }

  // Raw-unit prediction for the given region at the given interval.
  std::array<double, 2> predict(size_t region, size_t interval) const {
    const int z = grid_.intervals_per_day();
    size_t slot = static_cast<size_t>(grid_.interval_of_day(interval)) * 7 +
                  static_cast<size_t>(grid_.day_of_week(interval));
    size_t cnt = slot_count_[region * z * 7 + slot];
    std::array<double, 2> out;
    for (size_t c = 0; c < 2; ++c)
      out[c] = cnt > 0 ? slot_sum_[(region * z * 7 + slot) * 2 + c] / cnt
                       : region_sum_[region * 2 + c] / region_count_;  // empty-slot fallback
    return out;
  }

 private:
  GridSpec grid_;
  std::vector<double> slot_sum_;
  std::vector<size_t> slot_count_;
  std::vector<double> region_sum_;
  size_t region_count_;
};

// ---- MLP baseline ----------------------------------------------------------

// 3 hidden ReLU layers (128, 64, 32) + linear head on the flattened region
// flow history; trained with Adam at fixed lr 1e-3 in scaled units.
struct MlpBaseline {
  ParamStore params;
  size_t t_hist = 0;

  static MlpBaseline init(size_t t_hist, uint64_t seed) {
    MlpBaseline mlp;
    mlp.t_hist = t_hist;
    RngStream rng(seed, 300);
    const size_t in = t_hist * 2;
    const size_t dims[] = {in, 128, 64, 32, 2};
    for (size_t l = 0; l + 1 < std::size(dims); ++l) {
      std::string lp = "mlp." + std::to_string(l);
      mlp.params.add(lp + ".w", Tensor::glorot({dims[l], dims[l + 1]}, dims[l], dims[l + 1], rng));
      mlp.params.add(lp + ".b", Tensor::zeros({dims[l + 1]}));
    }
    return mlp;
  }

  Tensor forward(Tape& tape, const SampleWindow& w) const {
    Tensor x = Tensor::from({1, t_hist * 2}, w.decoder_input.data());
    for (size_t l = 0; l < 4; ++l) {
      std::string lp = "mlp." + std::to_string(l);
      x = linear(tape, x, params.get(lp + ".w"), params.get(lp + ".b"));
      if (l < 3) x = relu(tape, x);
    }
    return x;
  }

  void fit(const std::vector<SampleWindow>& windows, size_t epochs, size_t batch_size,
           uint64_t seed) {
    AdamState adam;
    RngStream rng(seed, 301);
    std::vector<size_t> order(windows.size());
    std::iota(order.begin(), order.end(), 0);
    for (size_t epoch = 0; epoch < epochs; ++epoch) {
      for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.next_index(i)]);
      for (size_t start = 0; start < order.size(); start += batch_size) {
        size_t bsz = std::min(batch_size, order.size() - start);
        params.zero_grads();
        for (size_t b = 0; b < bsz; ++b) {
          const auto& w = windows[order[start + b]];
          Tape tape;
          Tensor yhat = forward(tape, w);
          Tensor target = Tensor::from({1, 2}, {w.target.data()[0], w.target.data()[1]});
          Tensor loss = scale(tape, mse_mean(tape, yhat, target), 1.0 / bsz);
          tape.backward(loss);
        }
        adam_step(params, adam, 1e-3);
      }
    }
  }

  Predictor predictor() const {
    return [this](const SampleWindow& w) -> std::array<double, 2> {
      Tape tape;
      Tensor yhat = const_cast<MlpBaseline*>(this)->forward(tape, w);
      return {yhat.at({0, 0}), yhat.at({0, 1})};
    };
  }
};

// ---- ablation orchestration ------------------------------------------------

struct AblationPair {
  std::string variant_on;
  std::string variant_off;
  EvalReport report_on;
  EvalReport report_off;
};

struct AblationData {
  std::vector<SampleWindow> train_windows;
  std::vector<SampleWindow> val_windows;
  std::vector<SampleWindow> test_windows;
  ScalerParams flow_scaler;
  std::vector<double> region_means;
};

inline ModelConfig apply_ablation_flag(ModelConfig cfg, const std::string& suite, bool on) {
  if (suite == "stfm") cfg.use_stfm = on;
  else if (suite == "ft_block") cfg.use_ft_block = on;
  else if (suite == "ft_causal") cfg.ft_causal_in_decoder = on;
  else if (suite == "attention_scope") cfg.local_attention = on;
  else if (suite == "accident_encoding") cfg.use_accident_encoding = on;
  else throw ConfigError("unknown ablation suite: " + suite);
  return cfg;
}

// Trains and evaluates the flag-on and flag-off variants with identical
// seeds and data.
inline AblationPair run_ablation(const std::string& suite, const AblationData& data,
                                 const ModelConfig& base_cfg, const TrainConfig& tcfg) {
  AblationPair pair;
  pair.variant_on = suite + "_on";
  pair.variant_off = suite + "_off";
  for (bool on : {true, false}) {
    ModelConfig cfg = apply_ablation_flag(base_cfg, suite, on);
    RngStream init_rng(tcfg.seed, 400);
    ParamStore params = init_params(cfg, init_rng);
    train(params, data.train_windows, cfg, tcfg, data.val_windows);
    EvalReport rep = evaluate(make_stcl_predictor(params, cfg, tcfg.seed), true,
                              data.test_windows, data.flow_scaler, data.region_means,
                              tcfg.eval_region_threshold);
    (on ? pair.report_on : pair.report_off) = rep;
  }
  return pair;
}

}  // namespace stcl
