#pragma once

#include <string>
#include <vector>

#include "stcl/dataflow.hpp"
#include "stcl/optim.hpp"
#include "stcl/tensor.hpp"

namespace stcl {

struct ModelConfig {
  size_t d_model = 64;
  size_t d_f = 256;
  size_t num_layers = 3;
  size_t num_heads = 4;
  double dropout_rate = 0.1;
  size_t m_pool = 5;
  size_t stfm_channels = 256;
  size_t stfm_kernel = 5;
  std::vector<size_t> ft_kernel_sizes = {3, 5};
  size_t attention_window = 3;  // one-sided band half-width
  size_t T_hist = 12;
  int z = 96;               // intervals per day
  int week_days = 7;        // one-hot tail for day-of-week
  // ablation switches
  bool use_stfm = true;
  bool use_accident_encoding = true;
  bool use_ft_block = true;
  bool ft_causal_in_decoder = true;
  bool local_attention = true;

  void validate() const {
    if (d_model == 0 || d_f == 0 || num_heads == 0 || T_hist < 2 || z <= 0)
      throw ConfigError("model: extents must be positive, T_hist >= 2");
    if (d_model % num_heads != 0)
      throw ConfigError("model: d_model " + std::to_string(d_model) +
                        " not divisible by num_heads " + std::to_string(num_heads));
    if (m_pool % 2 == 0)
      throw ConfigError("model: m_pool must be odd, got " + std::to_string(m_pool));
    if (stfm_kernel % 2 == 0)
      throw ConfigError("model: stfm_kernel must be odd");
    if (dropout_rate < 0 || dropout_rate >= 1)
      throw ConfigError("model: dropout rate must be in [0,1)");
    if (ft_kernel_sizes.empty())
      throw ConfigError("model: ft_kernel_sizes must be non-empty");
  }

  size_t head_dim() const { return d_model / num_heads; }
  size_t onehot_width() const { return static_cast<size_t>(z + week_days); }
};

// ---- parameter construction ------------------------------------------------

namespace detail {

inline void add_attention_params(ParamStore& ps, const std::string& prefix,
                                 const ModelConfig& cfg, RngStream& rng) {
  const size_t d = cfg.d_model, dh = cfg.head_dim();
  for (size_t h = 0; h < cfg.num_heads; ++h) {
    std::string hp = prefix + ".h" + std::to_string(h);
    ps.add(hp + ".wq", Tensor::glorot({d, dh}, d, dh, rng));
    ps.add(hp + ".wk", Tensor::glorot({d, dh}, d, dh, rng));
    ps.add(hp + ".wv", Tensor::glorot({d, dh}, d, dh, rng));
  }
  ps.add(prefix + ".wo", Tensor::glorot({d, d}, d, d, rng));
}

inline void add_norm_params(ParamStore& ps, const std::string& prefix, size_t d) {
  ps.add(prefix + ".gamma", Tensor::full({d}, 1.0));
  ps.add(prefix + ".beta", Tensor::zeros({d}));
}

inline void add_ft_params(ParamStore& ps, const std::string& prefix,
                          const ModelConfig& cfg, RngStream& rng) {
  const size_t d = cfg.d_model;
  for (size_t k : cfg.ft_kernel_sizes) {
    std::string kp = prefix + ".conv_k" + std::to_string(k);
    ps.add(kp + ".kernel", Tensor::glorot({k, d, d}, k * d, d, rng));
    ps.add(kp + ".bias", Tensor::zeros({d}));
  }
  add_norm_params(ps, prefix + ".norm1", d);
  ps.add(prefix + ".ff.w1", Tensor::glorot({d, cfg.d_f}, d, cfg.d_f, rng));
  ps.add(prefix + ".ff.b1", Tensor::zeros({cfg.d_f}));
  ps.add(prefix + ".ff.w2", Tensor::glorot({cfg.d_f, d}, cfg.d_f, d, rng));
  ps.add(prefix + ".ff.b2", Tensor::zeros({d}));
  add_norm_params(ps, prefix + ".norm2", d);
}

}  // namespace detail

inline ParamStore init_params(const ModelConfig& cfg, RngStream& rng) {
  cfg.validate();
  ParamStore ps;
  const size_t d = cfg.d_model;
  if (cfg.use_stfm) {
    const size_t patch_ch = 2 * cfg.m_pool * cfg.m_pool;
    ps.add("stfm.conv0.kernel", Tensor::glorot({cfg.stfm_kernel, patch_ch, cfg.stfm_channels},
                                               cfg.stfm_kernel * patch_ch, cfg.stfm_channels, rng));
    ps.add("stfm.conv0.bias", Tensor::zeros({cfg.stfm_channels}));
    ps.add("stfm.conv1.kernel", Tensor::glorot({cfg.stfm_kernel, cfg.stfm_channels, d},
                                               cfg.stfm_kernel * cfg.stfm_channels, d, rng));
    ps.add("stfm.conv1.bias", Tensor::zeros({d}));
  } else {
    // global-average-pooling fallback: mean over the grid, then a linear lift
    ps.add("pool.w", Tensor::glorot({2, d}, 2, d, rng));
    ps.add("pool.b", Tensor::zeros({d}));
  }
  if (cfg.use_accident_encoding) {
    const size_t in = cfg.onehot_width();
    ps.add("acc.w0", Tensor::glorot({in, d}, in, d, rng));
    ps.add("acc.b0", Tensor::zeros({d}));
    ps.add("acc.w1", Tensor::glorot({d, d}, d, d, rng));
    ps.add("acc.b1", Tensor::zeros({d}));
  }
  for (size_t l = 0; l < cfg.num_layers; ++l) {
    std::string lp = "enc." + std::to_string(l);
    detail::add_attention_params(ps, lp + ".attn", cfg, rng);
    detail::add_norm_params(ps, lp + ".norm_attn", d);
    if (cfg.use_ft_block) detail::add_ft_params(ps, lp + ".ft", cfg, rng);
  }
  ps.add("dec.embed.w", Tensor::glorot({2, d}, 2, d, rng));
  ps.add("dec.embed.b", Tensor::zeros({d}));
  for (size_t l = 0; l < cfg.num_layers; ++l) {
    std::string lp = "dec." + std::to_string(l);
    detail::add_attention_params(ps, lp + ".self_attn", cfg, rng);
    detail::add_norm_params(ps, lp + ".norm_self", d);
    detail::add_attention_params(ps, lp + ".cross_attn", cfg, rng);
    detail::add_norm_params(ps, lp + ".norm_cross", d);
    if (cfg.use_ft_block) detail::add_ft_params(ps, lp + ".ft", cfg, rng);
  }
  ps.add("head.w", Tensor::glorot({d, 2}, d, 2, rng));
  ps.add("head.b", Tensor::zeros({2}));
  return ps;
}

// ---- attention masks -------------------------------------------------------

// 0 inside the allowed band, -1e9 outside; added to pre-softmax scores.
inline Tensor make_band_mask(size_t t_target, size_t t_source, size_t window,
                             bool causal) {
  Tensor m = Tensor::zeros({t_target, t_source});
  auto& v = m.mutable_data();
  for (size_t q = 0; q < t_target; ++q) {
    bool any = false;
    for (size_t k = 0; k < t_source; ++k) {
      long diff = static_cast<long>(q) - static_cast<long>(k);
      bool allowed = std::labs(diff) <= static_cast<long>(window);
      if (causal && k > q) allowed = false;
      v[q * t_source + k] = allowed ? 0.0 : -1e9;
      any = any || allowed;
    }
    if (!any)
      throw ConfigError("attention mask: query row " + std::to_string(q) +
                        " has no allowed keys");
  }
  return m;
}

inline Tensor make_full_mask(size_t t_target, size_t t_source) {
  return Tensor::zeros({t_target, t_source});
}

// ---- attention -------------------------------------------------------------

// Single head: softmax((Q Wq)(K Wk)^T / sqrt(d_head) + mask) (V Wv).
inline Tensor local_attention(Tape& tape, const Tensor& q, const Tensor& k,
                              const Tensor& v, const Tensor& mask, const Tensor& wq,
                              const Tensor& wk, const Tensor& wv) {
  const size_t dh = wq.extent(1);
  if (mask.shape() != Shape{q.extent(0), k.extent(0)})
    throw ShapeError("local_attention: mask " + shape_str(mask.shape()) +
                     " does not match Q/K lengths");
  for (size_t r = 0; r < mask.extent(0); ++r) {
    bool any = false;
    for (size_t c = 0; c < mask.extent(1); ++c)
      if (mask.at({r, c}) == 0.0) { any = true; break; }
    if (!any)
      throw ConfigError("local_attention: mask row " + std::to_string(r) +
                        " fully blocked");
  }
  Tensor qp = matmul(tape, q, wq);
  Tensor kp = matmul(tape, k, wk);
  Tensor vp = matmul(tape, v, wv);
  Tensor scores = scale(tape, matmul_nt(tape, qp, kp), 1.0 / std::sqrt(double(dh)));
  scores = add(tape, scores, mask);
  Tensor weights = softmax_last(tape, scores);
  return matmul(tape, weights, vp);
}

inline Tensor multi_head_local_attention(Tape& tape, const Tensor& q, const Tensor& k,
                                         const Tensor& v, const Tensor& mask,
                                         const ParamStore& params,
                                         const std::string& prefix,
                                         const ModelConfig& cfg) {
  std::vector<Tensor> heads;
  heads.reserve(cfg.num_heads);
  for (size_t h = 0; h < cfg.num_heads; ++h) {
    std::string hp = prefix + ".h" + std::to_string(h);
    heads.push_back(local_attention(tape, q, k, v, mask, params.get(hp + ".wq"),
                                    params.get(hp + ".wk"), params.get(hp + ".wv")));
  }
  Tensor cat = cfg.num_heads == 1 ? heads[0] : concat_last(tape, heads);
  return matmul(tape, cat, params.get(prefix + ".wo"));
}

// ---- FT-block --------------------------------------------------------------

// Multi-kernel conv branches + identity residual, norm, feed-forward, norm.
inline Tensor ft_block(Tape& tape, const Tensor& x, const ParamStore& params,
                       const std::string& prefix, const ModelConfig& cfg, bool causal,
                       Mode mode, RngStream& rng) {
  Tensor acc = x;
  for (size_t k : cfg.ft_kernel_sizes) {
    std::string kp = prefix + ".conv_k" + std::to_string(k);
    Tensor branch = causal
                        ? conv1d_causal(tape, x, params.get(kp + ".kernel"),
                                        params.get(kp + ".bias"))
                        : conv1d_same(tape, x, params.get(kp + ".kernel"),
                                      params.get(kp + ".bias"));
    acc = add(tape, acc, dropout(tape, branch, cfg.dropout_rate, mode, rng));
  }
  Tensor n1 = layer_norm(tape, acc, params.get(prefix + ".norm1.gamma"),
                         params.get(prefix + ".norm1.beta"));
  Tensor ff = linear(tape, relu(tape, linear(tape, n1, params.get(prefix + ".ff.w1"),
                                             params.get(prefix + ".ff.b1"))),
                     params.get(prefix + ".ff.w2"), params.get(prefix + ".ff.b2"));
  Tensor res = add(tape, n1, dropout(tape, ff, cfg.dropout_rate, mode, rng));
  return layer_norm(tape, res, params.get(prefix + ".norm2.gamma"),
                    params.get(prefix + ".norm2.beta"));
}

// ---- STFM ------------------------------------------------------------------

namespace detail {
// m x m patch around the center region, zero-padded at borders, flattened to
// [T x 2m^2]. Pure data movement; the view carries no gradient.
inline Tensor extract_patch_series(const Tensor& view, size_t x_cells, size_t y_cells,
                                   size_t region, size_t m_pool) {
  const size_t T = view.extent(2);
  const long half = static_cast<long>(m_pool / 2);
  const long rx = static_cast<long>(region / y_cells);
  const long ry = static_cast<long>(region % y_cells);
  Tensor out = Tensor::zeros({T, 2 * m_pool * m_pool});
  auto& o = out.mutable_data();
  const auto& v = view.data();
  for (size_t t = 0; t < T; ++t)
    for (size_t pi = 0; pi < m_pool; ++pi)
      for (size_t pj = 0; pj < m_pool; ++pj) {
        long cx = rx + static_cast<long>(pi) - half;
        long cy = ry + static_cast<long>(pj) - half;
        if (cx < 0 || cy < 0 || cx >= static_cast<long>(x_cells) ||
            cy >= static_cast<long>(y_cells))
          continue;
        for (size_t c = 0; c < 2; ++c)
          o[t * 2 * m_pool * m_pool + (pi * m_pool + pj) * 2 + c] =
              v[((static_cast<size_t>(cx) * y_cells + cy) * T + t) * 2 + c];
      }
  return out;
}
}  // namespace detail

// Spatial patch pooling + two temporal convs: [x,y,T,2] -> [T x d_model].
inline Tensor stfm_forward(Tape& tape, const Tensor& view, size_t region,
                           const ParamStore& params, const ModelConfig& cfg) {
  if (view.rank() != 4 || view.shape().back() != 2)
    throw ShapeError("stfm_forward: expected view [x,y,T,2], got " +
                     shape_str(view.shape()));
  const size_t x_cells = view.extent(0), y_cells = view.extent(1);
  const size_t T = view.extent(2);
  if (!cfg.use_stfm) {
    // grid-wide mean pooling per interval, then a linear lift to d_model
    Tensor pooled = Tensor::zeros({T, 2});
    const auto& v = view.data();
    const size_t cells = x_cells * y_cells;
    for (size_t cx = 0; cx < x_cells; ++cx)
      for (size_t cy = 0; cy < y_cells; ++cy)
        for (size_t t = 0; t < T; ++t)
          for (size_t c = 0; c < 2; ++c)
            pooled.mutable_data()[t * 2 + c] +=
                v[((cx * y_cells + cy) * T + t) * 2 + c] / cells;
    return relu(tape, linear(tape, pooled, params.get("pool.w"), params.get("pool.b")));
  }
  Tensor m = detail::extract_patch_series(view, x_cells, y_cells, region, cfg.m_pool);
  Tensor h = relu(tape, conv1d_same(tape, m, params.get("stfm.conv0.kernel"),
                                    params.get("stfm.conv0.bias")));
  return relu(tape, conv1d_same(tape, h, params.get("stfm.conv1.kernel"),
                                params.get("stfm.conv1.bias")));
}

// ---- accident encoding -----------------------------------------------------

// Two-hot (interval-of-day, day-of-week) scaled by the accident count, pushed
// through a small feed-forward map: [T] -> [T x d_model].
inline Tensor accident_encode(Tape& tape, const std::vector<double>& counts,
                              const std::vector<int>& interval_of_day,
                              const std::vector<int>& day_of_week,
                              const ParamStore& params, const ModelConfig& cfg) {
  const size_t T = counts.size();
  if (interval_of_day.size() != T || day_of_week.size() != T)
    throw ShapeError("accident_encode: series lengths differ");
  Tensor onehot = Tensor::zeros({T, cfg.onehot_width()});
  auto& v = onehot.mutable_data();
  for (size_t t = 0; t < T; ++t) {
    if (interval_of_day[t] < 0 || interval_of_day[t] >= cfg.z)
      throw ConfigError("accident_encode: interval_of_day out of [0,z)");
    if (day_of_week[t] < 0 || day_of_week[t] >= cfg.week_days)
      throw ConfigError("accident_encode: day_of_week out of [0,7)");
    v[t * cfg.onehot_width() + interval_of_day[t]] = counts[t];
    v[t * cfg.onehot_width() + cfg.z + day_of_week[t]] = counts[t];
  }
  Tensor h = relu(tape, linear(tape, onehot, params.get("acc.w0"), params.get("acc.b0")));
  return relu(tape, linear(tape, h, params.get("acc.w1"), params.get("acc.b1")));
}

// ---- encoder / decoder -----------------------------------------------------

inline Tensor encoder_forward(Tape& tape, const Tensor& enc_in, const ParamStore& params,
                              const ModelConfig& cfg, Mode mode, RngStream& rng) {
  const size_t T = enc_in.extent(0);
  Tensor mask = cfg.local_attention
                    ? make_band_mask(T, T, cfg.attention_window, false)
                    : make_full_mask(T, T);
  Tensor x = enc_in;
  for (size_t l = 0; l < cfg.num_layers; ++l) {
    std::string lp = "enc." + std::to_string(l);
    Tensor att = multi_head_local_attention(tape, x, x, x, mask, params,
                                            lp + ".attn", cfg);
    x = layer_norm(tape, add(tape, x, dropout(tape, att, cfg.dropout_rate, mode, rng)),
                   params.get(lp + ".norm_attn.gamma"), params.get(lp + ".norm_attn.beta"));
    if (cfg.use_ft_block)
      x = ft_block(tape, x, params, lp + ".ft", cfg, /*causal=*/false, mode, rng);
  }
  return x;
}

// Embedded decoder input + encoder memory -> per-position predictions
// [T x 2]; position t predicts interval t+1.
inline Tensor decoder_forward(Tape& tape, const Tensor& dec_in, const Tensor& memory,
                              const ParamStore& params, const ModelConfig& cfg,
                              Mode mode, RngStream& rng) {
  const size_t T = dec_in.extent(0);
  Tensor self_mask = cfg.local_attention
                         ? make_band_mask(T, T, cfg.attention_window, true)
                         : make_band_mask(T, T, T, true);
  Tensor cross_mask = make_full_mask(T, memory.extent(0));
  Tensor x = dec_in;
  for (size_t l = 0; l < cfg.num_layers; ++l) {
    std::string lp = "dec." + std::to_string(l);
    Tensor sa = multi_head_local_attention(tape, x, x, x, self_mask, params,
                                           lp + ".self_attn", cfg);
    x = layer_norm(tape, add(tape, x, dropout(tape, sa, cfg.dropout_rate, mode, rng)),
                   params.get(lp + ".norm_self.gamma"), params.get(lp + ".norm_self.beta"));
    Tensor ca = multi_head_local_attention(tape, x, memory, memory, cross_mask, params,
                                           lp + ".cross_attn", cfg);
    x = layer_norm(tape, add(tape, x, dropout(tape, ca, cfg.dropout_rate, mode, rng)),
                   params.get(lp + ".norm_cross.gamma"), params.get(lp + ".norm_cross.beta"));
    if (cfg.use_ft_block)
      x = ft_block(tape, x, params, lp + ".ft", cfg, cfg.ft_causal_in_decoder, mode, rng);
  }
  return linear(tape, x, params.get("head.w"), params.get("head.b"));
}

// Full forward pass for one window; returns yhat [1 x 2] in scaled units.
inline Tensor stcl_forward(Tape& tape, const SampleWindow& sample,
                           const ParamStore& params, const ModelConfig& cfg, Mode mode,
                           RngStream& rng) {
  Tensor enc_in = stfm_forward(tape, sample.encoder_view, sample.region, params, cfg);
  if (cfg.use_accident_encoding) {
    Tensor ae = accident_encode(tape, sample.acc_counts, sample.interval_of_day,
                                sample.day_of_week, params, cfg);
    enc_in = add(tape, enc_in, ae);
  }
  Tensor memory = encoder_forward(tape, enc_in, params, cfg, mode, rng);
  Tensor dec_emb = linear(tape, sample.decoder_input, params.get("dec.embed.w"),
                          params.get("dec.embed.b"));
  Tensor dec_out = decoder_forward(tape, dec_emb, memory, params, cfg, mode, rng);
  return slice_rows(tape, dec_out, dec_out.extent(0) - 1, 1);
}

// Autoregressive rollout: decoder positions beyond `observed_prefix` are
// filled with the model's own previous predictions.
inline Tensor stcl_rollout(const SampleWindow& sample, const ParamStore& params,
                           const ModelConfig& cfg, size_t observed_prefix,
                           RngStream& rng) {
  const size_t T = sample.decoder_input.extent(0);
  if (observed_prefix == 0 || observed_prefix > T)
    throw ConfigError("stcl_rollout: observed_prefix must be in [1, T_hist]");
  SampleWindow work = sample;
  work.decoder_input = Tensor::zeros({T, 2});
  for (size_t t = 0; t < observed_prefix; ++t)
    for (size_t c = 0; c < 2; ++c)
      work.decoder_input.mutable_data()[t * 2 + c] = sample.decoder_input.at({t, c});
  Tensor yhat;
  for (size_t t = observed_prefix; t <= T; ++t) {
    Tape tape;
    Tensor enc_in = stfm_forward(tape, work.encoder_view, work.region, params, cfg);
    if (cfg.use_accident_encoding) {
      Tensor ae = accident_encode(tape, work.acc_counts, work.interval_of_day,
                                  work.day_of_week, params, cfg);
      enc_in = add(tape, enc_in, ae);
    }
    Tensor memory = encoder_forward(tape, enc_in, params, cfg, Mode::kEval, rng);
    Tensor dec_emb = linear(tape, work.decoder_input, params.get("dec.embed.w"),
                            params.get("dec.embed.b"));
    Tensor dec_out = decoder_forward(tape, dec_emb, memory, params, cfg, Mode::kEval, rng);
    yhat = slice_rows(tape, dec_out, t - 1, 1);
    if (t < T)
      for (size_t c = 0; c < 2; ++c)
        work.decoder_input.mutable_data()[t * 2 + c] = yhat.at({0, c});
  }
  return yhat;
}

// MSE over all predicted scalars of a batch.
inline Tensor stcl_loss(Tape& tape, const std::vector<Tensor>& yhat_batch,
                        const std::vector<Tensor>& y_batch) {
  if (yhat_batch.empty() || yhat_batch.size() != y_batch.size())
    throw ShapeError("stcl_loss: batch size mismatch");
  Tensor yhat = yhat_batch.size() == 1 ? yhat_batch[0]
                                       : concat_last(tape, yhat_batch);  // [1 x 2B]
  Tensor target = Tensor::zeros(yhat.shape());
  size_t off = 0;
  for (const auto& y : y_batch) {
    if (y.numel() != yhat_batch[0].numel())
      throw ShapeError("stcl_loss: target element count mismatch");
    for (size_t i = 0; i < y.numel(); ++i)
      target.mutable_data()[off + i] = y.data()[i];
    off += y.numel();
  }
  return mse_mean(tape, yhat, target);
}

}  // namespace stcl
