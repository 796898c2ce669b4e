#pragma once

#include <string>
#include <vector>

#include "stcl/config.hpp"
#include "stcl/dataflow.hpp"
#include "stcl/model.hpp"
#include "stcl/trainer.hpp"

namespace stcl {

// One window targeting a specific interval; history may reach back across a
// split boundary (it is past data either way).
inline SampleWindow make_window_at(const Tensor& flow_scaled,
                                   const Tensor& region_view_scaled,
                                   const AccidentCube& accidents, const GridSpec& grid,
                                   size_t T_hist, size_t region, size_t target_interval) {
  if (target_interval < T_hist || target_interval >= grid.num_intervals)
    throw ConfigError("make_window_at: target interval out of range");
  const size_t X = grid.x_cells, Y = grid.y_cells, T = grid.num_intervals;
  const size_t ts = target_interval - T_hist;
  SampleWindow w;
  w.region = region;
  w.start_interval = ts;
  w.target_interval = target_interval;
  w.encoder_view = Tensor::zeros({X, Y, T_hist, 2});
  const auto& vw = region_view_scaled.data();
  auto& ev = w.encoder_view.mutable_data();
  for (size_t cx = 0; cx < X; ++cx)
    for (size_t cy = 0; cy < Y; ++cy)
      for (size_t h = 0; h < T_hist; ++h)
        for (size_t c = 0; c < 2; ++c)
          ev[((cx * Y + cy) * T_hist + h) * 2 + c] = vw[((cx * Y + cy) * T + ts + h) * 2 + c];
  const auto& acc = accidents.values.data();
  const auto& flow = flow_scaled.data();
  size_t rx = region / Y, ry = region % Y;
  w.acc_counts.resize(T_hist);
  w.interval_of_day.resize(T_hist);
  w.day_of_week.resize(T_hist);
  for (size_t h = 0; h < T_hist; ++h) {
    w.acc_counts[h] = acc[(rx * Y + ry) * T + ts + h];
    w.interval_of_day[h] = grid.interval_of_day(ts + h);
    w.day_of_week[h] = grid.day_of_week(ts + h);
  }
  w.decoder_input = Tensor::zeros({T_hist, 2});
  for (size_t h = 0; h < T_hist; ++h)
    for (size_t c = 0; c < 2; ++c)
      w.decoder_input.mutable_data()[h * 2 + c] = flow[((rx * Y + ry) * T + ts + h) * 2 + c];
  w.target = Tensor::zeros({2});
  for (size_t c = 0; c < 2; ++c)
    w.target.mutable_data()[c] = flow[((rx * Y + ry) * T + target_interval) * 2 + c];
  return w;
}

struct Dataset {
  GridSpec grid;
  Tensor flow_raw;
  Tensor flow_scaled;
  ScalerParams flow_scaler;
  ScalerParams trans_scaler;
  IntervalRange train_range, test_range;
  std::vector<SampleWindow> train_windows;  // history fully inside the fit range
  std::vector<SampleWindow> val_windows;    // tail of the training range
  std::vector<SampleWindow> test_windows;   // one per (region, test interval)
  std::vector<double> region_means;
};

// Split, scale (fit on the training range only), and window the cubes.
inline Dataset build_dataset(const RunConfig& cfg, const FlowCube& flow,
                             const TransitionCube& transitions,
                             const AccidentCube& accidents) {
  Dataset ds;
  ds.grid = cfg.grid;
  ds.grid.validate();
  ds.flow_raw = flow.values;
  auto [train_range, test_range] = split_train_test(ds.grid.num_intervals, cfg.split_fraction);
  ds.train_range = train_range;
  ds.test_range = test_range;
  ds.flow_scaler = minmax_fit(flow.values, train_range);
  ds.trans_scaler = minmax_fit(transitions.values, train_range);
  ds.flow_scaled = minmax_apply(flow.values, ds.flow_scaler);
  ds.region_means = region_mean_flow(flow.values, ds.grid, train_range);

  const size_t T_hist = cfg.model.T_hist;
  size_t val_len = static_cast<size_t>(cfg.train.validation_fraction * train_range.length());
  IntervalRange fit_range{train_range.begin, train_range.end - val_len};
  IntervalRange val_range{train_range.end - val_len, train_range.end};
  ds.train_windows = make_windows(ds.flow_scaled, transitions, ds.trans_scaler,
                                  accidents, ds.grid, T_hist, fit_range);
  if (val_range.length() > T_hist)
    ds.val_windows = make_windows(ds.flow_scaled, transitions, ds.trans_scaler,
                                  accidents, ds.grid, T_hist, val_range);

  for (size_t region = 0; region < ds.grid.regions(); ++region) {
    Tensor view = minmax_apply(region_transition_view(transitions, ds.grid, region),
                               ds.trans_scaler);
    for (size_t t = test_range.begin; t < test_range.end; ++t)
      ds.test_windows.push_back(make_window_at(ds.flow_scaled, view, accidents, ds.grid,
                                               T_hist, region, t));
  }
  return ds;
}

}  // namespace stcl
