#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stcl/tensor.hpp"

namespace stcl {

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a file parses but its contents fail the quality gate
// (>50% unparseable rows).
struct DataQualityError : DataError {
  explicit DataQualityError(const std::string& msg) : DataError(msg) {}
};

// ---- grid ------------------------------------------------------------------

struct GridSpec {
  double lon_min = 0, lon_max = 1;
  double lat_min = 0, lat_max = 1;
  size_t x_cells = 10, y_cells = 20;
  int interval_minutes = 15;
  int64_t t0 = 0;            // epoch seconds of interval 0
  size_t num_intervals = 0;  // T

  void validate() const {
    if (lon_min >= lon_max || lat_min >= lat_max)
      throw ConfigError("grid: bbox must have lon_min < lon_max, lat_min < lat_max");
    if (x_cells == 0 || y_cells == 0 || interval_minutes <= 0 || num_intervals == 0)
      throw ConfigError("grid: extents and interval must be positive");
  }

  size_t regions() const { return x_cells * y_cells; }
  int64_t interval_seconds() const { return int64_t{60} * interval_minutes; }
  int intervals_per_day() const { return static_cast<int>(86400 / interval_seconds()); }

  // Cell index, or nullopt if the point falls outside the bbox.
  std::optional<std::pair<size_t, size_t>> cell(double lon, double lat) const {
    if (lon < lon_min || lon >= lon_max || lat < lat_min || lat >= lat_max)
      return std::nullopt;
    size_t cx = static_cast<size_t>((lon - lon_min) / (lon_max - lon_min) * x_cells);
    size_t cy = static_cast<size_t>((lat - lat_min) / (lat_max - lat_min) * y_cells);
    if (cx >= x_cells) cx = x_cells - 1;  // floating-point edge at the max bound
    if (cy >= y_cells) cy = y_cells - 1;
    return std::make_pair(cx, cy);
  }

  std::optional<size_t> interval(int64_t t) const {
    if (t < t0) return std::nullopt;
    size_t idx = static_cast<size_t>((t - t0) / interval_seconds());
    if (idx >= num_intervals) return std::nullopt;
    return idx;
  }

  int interval_of_day(size_t t_idx) const {
    int64_t t = t0 + static_cast<int64_t>(t_idx) * interval_seconds();
    return static_cast<int>((t % 86400) / interval_seconds());
  }

  int day_of_week(size_t t_idx) const {
    int64_t t = t0 + static_cast<int64_t>(t_idx) * interval_seconds();
    return static_cast<int>(((t / 86400) + 4) % 7);  // 1970-01-01 was a Thursday
  }

  // Cell centers, for emitting records that bin back into the same cell.
  double cell_center_lon(size_t cx) const {
    return lon_min + (cx + 0.5) * (lon_max - lon_min) / x_cells;
  }
  double cell_center_lat(size_t cy) const {
    return lat_min + (cy + 0.5) * (lat_max - lat_min) / y_cells;
  }
};

struct TripRecord {
  int64_t start_time = 0, end_time = 0;
  double start_lon = 0, start_lat = 0, end_lon = 0, end_lat = 0;
};

struct AccidentRecord {
  int64_t time = 0;
  double lon = 0, lat = 0;
};

struct IngestReport {
  size_t total_rows = 0;
  size_t accepted = 0;
  size_t rejected_parse = 0;
  size_t rejected_bounds = 0;
  size_t rejected_order = 0;  // end_time < start_time
  size_t rejected() const { return rejected_parse + rejected_bounds + rejected_order; }
};

// ---- cubes -----------------------------------------------------------------

// [x, y, T, 2]; channel 0 = inflow, channel 1 = outflow.
struct FlowCube {
  Tensor values;
  size_t counted_trips = 0;
};

// [xi, yi, xj, yj, T, 2]; channel 0 = out(i->j) at start interval,
// channel 1 = in(j<-i) at end interval.
struct TransitionCube {
  Tensor values;
  size_t m_span = 4;
  size_t counted_trips = 0;
  size_t skipped_span = 0;
};

// [x, y, T, 1] accident counts.
struct AccidentCube {
  Tensor values;
  size_t counted = 0;
};

// ---- CSV ingestion ---------------------------------------------------------

namespace detail {

// Accepts epoch seconds or ISO-8601 "YYYY-MM-DD[ T]HH:MM:SS".
inline std::optional<int64_t> parse_time(const std::string& s) {
  if (s.empty()) return std::nullopt;
  int y, mo, d, h, mi, sec;
  char sep;
  if (std::sscanf(s.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &sec) == 7 &&
      (sep == ' ' || sep == 'T')) {
    // days-from-civil (Howard Hinnant's algorithm)
    int yy = y - (mo <= 2);
    int era = (yy >= 0 ? yy : yy - 399) / 400;
    unsigned yoe = static_cast<unsigned>(yy - era * 400);
    unsigned doy = (153u * (mo + (mo > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    int64_t days = static_cast<int64_t>(era) * 146097 + static_cast<int64_t>(doe) - 719468;
    return days * 86400 + h * 3600 + mi * 60 + sec;
  }
  try {
    size_t pos = 0;
    int64_t v = std::stoll(s, &pos);
    if (pos == s.size()) return v;
  } catch (...) {
  }
  return std::nullopt;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    out.push_back(field);
  }
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos == s.size()) return v;
  } catch (...) {
  }
  return std::nullopt;
}

}  // namespace detail

inline std::pair<std::vector<TripRecord>, IngestReport> ingest_trips(
    const std::string& path, const GridSpec& grid) {
  grid.validate();
  std::ifstream in(path);
  if (!in) throw DataError("cannot open trips file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("trips file is empty: " + path);
  auto header = detail::split_csv_line(line);
  const std::vector<std::string> expected = {"start_time", "end_time", "start_lon",
                                             "start_lat", "end_lon", "end_lat"};
  if (header != expected)
    throw DataError("trips file " + path +
                    ": expected header start_time,end_time,start_lon,start_lat,end_lon,end_lat");

  std::vector<TripRecord> trips;
  IngestReport report;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++report.total_rows;
    auto f = detail::split_csv_line(line);
    if (f.size() != 6) {
      ++report.rejected_parse;
      continue;
    }
    auto st = detail::parse_time(f[0]);
    auto et = detail::parse_time(f[1]);
    auto slon = detail::parse_double(f[2]);
    auto slat = detail::parse_double(f[3]);
    auto elon = detail::parse_double(f[4]);
    auto elat = detail::parse_double(f[5]);
    if (!st || !et || !slon || !slat || !elon || !elat) {
      ++report.rejected_parse;
      continue;
    }
    if (*et < *st) {
      ++report.rejected_order;
      continue;
    }
    if (!grid.cell(*slon, *slat) || !grid.cell(*elon, *elat) ||
        !grid.interval(*st) || !grid.interval(*et)) {
      ++report.rejected_bounds;
      continue;
    }
    trips.push_back({*st, *et, *slon, *slat, *elon, *elat});
    ++report.accepted;
  }
  if (report.total_rows > 0 && report.rejected_parse * 2 > report.total_rows)
    throw DataQualityError("trips file " + path + ": more than 50% of rows unparseable (" +
                    std::to_string(report.rejected_parse) + "/" +
                    std::to_string(report.total_rows) + ")");
  return {std::move(trips), report};
}

inline FlowCube compute_flow(const std::vector<TripRecord>& trips, const GridSpec& grid) {
  grid.validate();
  FlowCube cube;
  cube.values = Tensor::zeros({grid.x_cells, grid.y_cells, grid.num_intervals, 2});
  auto& v = cube.values.mutable_data();
  const size_t T = grid.num_intervals;
  auto idx = [&](size_t cx, size_t cy, size_t t, size_t c) {
    return ((cx * grid.y_cells + cy) * T + t) * 2 + c;
  };
  for (const auto& trip : trips) {
    auto sc = grid.cell(trip.start_lon, trip.start_lat);
    auto ec = grid.cell(trip.end_lon, trip.end_lat);
    auto ti = grid.interval(trip.start_time);
    auto tj = grid.interval(trip.end_time);
    if (!sc || !ec || !ti || !tj) continue;
    if (*sc == *ec) continue;  // same-cell trips contribute nothing
    v[idx(sc->first, sc->second, *ti, 1)] += 1.0;  // outflow at start
    v[idx(ec->first, ec->second, *tj, 0)] += 1.0;  // inflow at end
    ++cube.counted_trips;
  }
  return cube;
}

inline TransitionCube compute_transitions(const std::vector<TripRecord>& trips,
                                          const GridSpec& grid, size_t m_span) {
  grid.validate();
  if (m_span < 1) throw ConfigError("compute_transitions: m_span must be >= 1");
  TransitionCube cube;
  cube.m_span = m_span;
  const size_t X = grid.x_cells, Y = grid.y_cells, T = grid.num_intervals;
  cube.values = Tensor::zeros({X, Y, X, Y, T, 2});
  auto& v = cube.values.mutable_data();
  auto idx = [&](size_t xi, size_t yi, size_t xj, size_t yj, size_t t, size_t c) {
    return ((((xi * Y + yi) * X + xj) * Y + yj) * T + t) * 2 + c;
  };
  for (const auto& trip : trips) {
    auto sc = grid.cell(trip.start_lon, trip.start_lat);
    auto ec = grid.cell(trip.end_lon, trip.end_lat);
    auto ti = grid.interval(trip.start_time);
    auto tj = grid.interval(trip.end_time);
    if (!sc || !ec || !ti || !tj) continue;
    if (*sc == *ec) continue;
    if (*tj - *ti > m_span) {
      ++cube.skipped_span;
      continue;
    }
    v[idx(sc->first, sc->second, ec->first, ec->second, *ti, 0)] += 1.0;
    v[idx(sc->first, sc->second, ec->first, ec->second, *tj, 1)] += 1.0;
    ++cube.counted_trips;
  }
  return cube;
}

// Per-region slice: [x, y, T, 2] with channel 0 = inbound-to-i from each cell
// (at arrival interval), channel 1 = outbound-from-i to each cell (at
// departure interval).
inline Tensor region_transition_view(const TransitionCube& tc, const GridSpec& grid,
                                     size_t region) {
  if (region >= grid.regions())
    throw ShapeError("region_transition_view: region " + std::to_string(region) +
                     " out of range");
  const size_t X = grid.x_cells, Y = grid.y_cells, T = grid.num_intervals;
  const size_t xi = region / Y, yi = region % Y;
  Tensor view = Tensor::zeros({X, Y, T, 2});
  auto& out = view.mutable_data();
  const auto& v = tc.values.data();
  auto idx = [&](size_t a, size_t b, size_t c, size_t d, size_t t, size_t ch) {
    return ((((a * Y + b) * X + c) * Y + d) * T + t) * 2 + ch;
  };
  for (size_t cx = 0; cx < X; ++cx)
    for (size_t cy = 0; cy < Y; ++cy)
      for (size_t t = 0; t < T; ++t) {
        size_t o = ((cx * Y + cy) * T + t) * 2;
        out[o + 0] = v[idx(cx, cy, xi, yi, t, 1)];  // inbound to i, arrival time
        out[o + 1] = v[idx(xi, yi, cx, cy, t, 0)];  // outbound from i, departure time
      }
  return view;
}

inline std::pair<AccidentCube, IngestReport> ingest_accidents(const std::string& path,
                                                              const GridSpec& grid) {
  grid.validate();
  std::ifstream in(path);
  if (!in) throw DataError("cannot open accidents file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("accidents file is empty: " + path);
  auto header = detail::split_csv_line(line);
  if (header != std::vector<std::string>{"time", "lon", "lat"})
    throw DataError("accidents file " + path + ": expected header time,lon,lat");

  AccidentCube cube;
  cube.values = Tensor::zeros({grid.x_cells, grid.y_cells, grid.num_intervals, 1});
  IngestReport report;
  auto& v = cube.values.mutable_data();
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    ++report.total_rows;
    auto f = detail::split_csv_line(line);
    if (f.size() != 3) {
      ++report.rejected_parse;
      continue;
    }
    auto t = detail::parse_time(f[0]);
    auto lon = detail::parse_double(f[1]);
    auto lat = detail::parse_double(f[2]);
    if (!t || !lon || !lat) {
      ++report.rejected_parse;
      continue;
    }
    auto c = grid.cell(*lon, *lat);
    auto ti = grid.interval(*t);
    if (!c || !ti) {
      ++report.rejected_bounds;
      continue;
    }
    v[(c->first * grid.y_cells + c->second) * grid.num_intervals + *ti] += 1.0;
    ++report.accepted;
    ++cube.counted;
  }
  if (report.total_rows > 0 && report.rejected_parse * 2 > report.total_rows)
    throw DataQualityError("accidents file " + path + ": more than 50% of rows unparseable");
  return {std::move(cube), report};
}

// ---- scaling ---------------------------------------------------------------

struct ScalerParams {
  std::vector<double> mins;
  std::vector<double> maxs;
};

struct IntervalRange {
  size_t begin = 0;
  size_t end = 0;  // exclusive
  size_t length() const { return end - begin; }
};

// Cube layout assumed [..., T, C]: time on the second-to-last axis, channels
// last. Fit uses only intervals in `range` (the training split).
inline ScalerParams minmax_fit(const Tensor& cube, const IntervalRange& range) {
  if (cube.rank() < 2) throw ShapeError("minmax_fit: need at least [T x C]");
  const size_t C = cube.shape().back();
  const size_t T = cube.shape()[cube.rank() - 2];
  if (range.begin >= range.end || range.end > T)
    throw ConfigError("minmax_fit: bad interval range");
  const size_t outer = cube.numel() / (T * C);
  ScalerParams p;
  p.mins.assign(C, std::numeric_limits<double>::infinity());
  p.maxs.assign(C, -std::numeric_limits<double>::infinity());
  const auto& v = cube.data();
  for (size_t o = 0; o < outer; ++o)
    for (size_t t = range.begin; t < range.end; ++t)
      for (size_t c = 0; c < C; ++c) {
        double x = v[(o * T + t) * C + c];
        p.mins[c] = std::min(p.mins[c], x);
        p.maxs[c] = std::max(p.maxs[c], x);
      }
  return p;
}

// Maps fitted min->0, max->1; out-of-range values pass through unclipped so
// apply/invert stays invertible. A degenerate (max==min) channel maps to 0.
inline Tensor minmax_apply(const Tensor& cube, const ScalerParams& p) {
  const size_t C = cube.shape().back();
  if (p.mins.size() != C) throw ShapeError("minmax_apply: channel count mismatch");
  Tensor out = Tensor::zeros(cube.shape());
  const auto& v = cube.data();
  auto& o = out.mutable_data();
  for (size_t i = 0; i < v.size(); ++i) {
    size_t c = i % C;
    double span = p.maxs[c] - p.mins[c];
    o[i] = span > 0 ? (v[i] - p.mins[c]) / span : 0.0;
  }
  return out;
}

inline Tensor minmax_invert(const Tensor& cube, const ScalerParams& p) {
  const size_t C = cube.shape().back();
  if (p.mins.size() != C) throw ShapeError("minmax_invert: channel count mismatch");
  Tensor out = Tensor::zeros(cube.shape());
  const auto& v = cube.data();
  auto& o = out.mutable_data();
  for (size_t i = 0; i < v.size(); ++i) {
    size_t c = i % C;
    double span = p.maxs[c] - p.mins[c];
    o[i] = span > 0 ? v[i] * span + p.mins[c] : p.mins[c];
  }
  return out;
}

inline double minmax_invert_value(double x, const ScalerParams& p, size_t channel) {
  double span = p.maxs[channel] - p.mins[channel];
  return span > 0 ? x * span + p.mins[channel] : p.mins[channel];
}

// ---- splitting and windowing -----------------------------------------------

inline std::pair<IntervalRange, IntervalRange> split_train_test(size_t T, double fraction) {
  if (fraction <= 0.0 || fraction >= 1.0)
    throw ConfigError("split_train_test: fraction must be in (0,1)");
  size_t train = static_cast<size_t>(std::floor(fraction * T));
  if (train == 0 || train == T)
    throw ConfigError("split_train_test: split leaves an empty side (T=" +
                      std::to_string(T) + ", fraction=" + std::to_string(fraction) + ")");
  return {{0, train}, {train, T}};
}

// One (region, history window) training example. All series are aligned:
// the target interval is the last input interval + 1.
struct SampleWindow {
  size_t region = 0;
  size_t start_interval = 0;   // first input interval
  size_t target_interval = 0;  // == start_interval + T_hist
  Tensor encoder_view;         // [x, y, T_hist, 2] transition patch series (scaled)
  std::vector<double> acc_counts;  // [T_hist]
  std::vector<int> interval_of_day;
  std::vector<int> day_of_week;
  Tensor decoder_input;  // [T_hist x 2] scaled region flow (teacher forcing)
  Tensor target;         // [2] scaled flow at target_interval
};

inline std::vector<SampleWindow> make_windows(const Tensor& flow_scaled,
                                              const TransitionCube& transitions,
                                              const ScalerParams& trans_scaler,
                                              const AccidentCube& accidents,
                                              const GridSpec& grid, size_t T_hist,
                                              const IntervalRange& range) {
  if (T_hist < 2) throw ConfigError("make_windows: T_hist must be >= 2");
  if (range.length() <= T_hist)
    throw ConfigError("make_windows: range length " + std::to_string(range.length()) +
                      " must exceed T_hist " + std::to_string(T_hist));
  const size_t X = grid.x_cells, Y = grid.y_cells, T = grid.num_intervals;
  const auto& flow = flow_scaled.data();
  const auto& acc = accidents.values.data();

  std::vector<SampleWindow> windows;
  windows.reserve(grid.regions() * (range.length() - T_hist));
  for (size_t region = 0; region < grid.regions(); ++region) {
    Tensor view = minmax_apply(region_transition_view(transitions, grid, region),
                               trans_scaler);
    const auto& vw = view.data();
    size_t rx = region / Y, ry = region % Y;
    for (size_t ts = range.begin; ts + T_hist < range.end; ++ts) {
      SampleWindow w;
      w.region = region;
      w.start_interval = ts;
      w.target_interval = ts + T_hist;
      w.encoder_view = Tensor::zeros({X, Y, T_hist, 2});
      auto& ev = w.encoder_view.mutable_data();
      for (size_t cx = 0; cx < X; ++cx)
        for (size_t cy = 0; cy < Y; ++cy)
          for (size_t h = 0; h < T_hist; ++h)
            for (size_t c = 0; c < 2; ++c)
              ev[((cx * Y + cy) * T_hist + h) * 2 + c] =
                  vw[((cx * Y + cy) * T + ts + h) * 2 + c];
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
          w.decoder_input.mutable_data()[h * 2 + c] =
              flow[((rx * Y + ry) * T + ts + h) * 2 + c];
      w.target = Tensor::zeros({2});
      for (size_t c = 0; c < 2; ++c)
        w.target.mutable_data()[c] = flow[((rx * Y + ry) * T + w.target_interval) * 2 + c];
      windows.push_back(std::move(w));
    }
  }
  return windows;
}

}  // namespace stcl
