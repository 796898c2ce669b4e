#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "stcl/dataflow.hpp"
#include "stcl/rng.hpp"

namespace stcl {

// Deterministic synthetic city: Poisson trips between neighboring cells with
// daily/weekly periodic intensity, plus accident episodes that suppress
// departures from the affected cells and redirect arrivals toward them.
struct SynthConfig {
  size_t x_cells = 4;
  size_t y_cells = 4;
  int days = 14;
  int interval_minutes = 15;
  double base_rate = 6.0;       // expected trips per cell per interval
  double daily_amplitude = 0.5; // sinusoidal time-of-day modulation
  std::array<double, 7> weekday_factor = {0.75, 1, 1, 1, 1, 1, 0.85};  // 0=Sun
  double accident_rate = 0.0;   // expected accidents per cell per interval
  int accident_duration = 8;    // intervals an episode lasts
  double suppression = 0.3;     // departure intensity multiplier during episodes
  double boost = 2.0;           // destination-weight multiplier during episodes
  uint64_t seed = 1;
  int64_t t0 = 1704067200;      // 2024-01-01 00:00 UTC

  void validate() const {
    if (base_rate < 0 || accident_rate < 0)
      throw ConfigError("synth: rates must be >= 0");
    if (suppression <= 0 || boost <= 0)
      throw ConfigError("synth: factors must be > 0");
    if (accident_duration < 1) throw ConfigError("synth: duration must be >= 1");
    if (x_cells == 0 || y_cells == 0 || days < 1 || interval_minutes <= 0)
      throw ConfigError("synth: grid/days/interval must be positive");
  }

  GridSpec grid() const {
    GridSpec g;
    g.lon_min = 0;
    g.lon_max = static_cast<double>(x_cells);
    g.lat_min = 0;
    g.lat_max = static_cast<double>(y_cells);
    g.x_cells = x_cells;
    g.y_cells = y_cells;
    g.interval_minutes = interval_minutes;
    g.t0 = t0;
    g.num_intervals = static_cast<size_t>(days) * (86400 / (interval_minutes * 60));
    return g;
  }
};

struct SynthOutput {
  std::vector<TripRecord> trips;
  std::vector<AccidentRecord> accidents;
  Tensor rate_cube;  // [x, y, T, 2] ground-truth (inbound, outbound) intensities
};

namespace detail {
enum : uint64_t { kAccCount = 1, kTripCount = 2, kTripAttr = 3 };
}

inline SynthOutput generate(const SynthConfig& cfg) {
  cfg.validate();
  GridSpec grid = cfg.grid();
  const size_t X = cfg.x_cells, Y = cfg.y_cells, T = grid.num_intervals;
  const int z = grid.intervals_per_day();
  RngStream root(cfg.seed, 0);

  SynthOutput out;

  // accidents first; their episodes modulate trip intensities
  std::vector<double> out_mult(X * Y * T, 1.0);
  std::vector<double> dest_weight(X * Y * T, 1.0);
  std::vector<int> acc_count(X * Y * T, 0);
  for (size_t cx = 0; cx < X; ++cx)
    for (size_t cy = 0; cy < Y; ++cy)
      for (size_t t = 0; t < T; ++t) {
        RngStream s = root.split(hash_combine(detail::kAccCount,
                                              (cx * Y + cy) * T + t));
        int n = s.next_poisson(cfg.accident_rate);
        if (n == 0) continue;
        acc_count[(cx * Y + cy) * T + t] = n;
        for (int k = 0; k < n; ++k)
          out.accidents.push_back({grid.t0 + static_cast<int64_t>(t) * grid.interval_seconds(),
                                   grid.cell_center_lon(cx), grid.cell_center_lat(cy)});
        const long nbrs[5][2] = {{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}};
        for (auto& d : nbrs) {
          long ax = static_cast<long>(cx) + d[0];
          long ay = static_cast<long>(cy) + d[1];
          if (ax < 0 || ay < 0 || ax >= static_cast<long>(X) || ay >= static_cast<long>(Y))
            continue;
          // an accident in interval t disrupts the following intervals
          for (size_t tau = t + 1; tau < std::min(T, t + 1 + cfg.accident_duration); ++tau)
            for (int k = 0; k < n; ++k) {
              out_mult[(ax * Y + ay) * T + tau] *= cfg.suppression;
              dest_weight[(ax * Y + ay) * T + tau] *= cfg.boost;
            }
        }
      }

  // per-cell outbound intensity
  auto intensity = [&](size_t cx, size_t cy, size_t t) {
    double daily = 1.0 + cfg.daily_amplitude *
                             std::sin(2.0 * M_PI * grid.interval_of_day(t) / z);
    double wk = cfg.weekday_factor[grid.day_of_week(t)];
    return cfg.base_rate * daily * wk * out_mult[(cx * Y + cy) * T + t];
  };

  out.rate_cube = Tensor::zeros({X, Y, T, 2});
  auto& rates = out.rate_cube.mutable_data();

  const long nbrs[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  for (size_t cx = 0; cx < X; ++cx)
    for (size_t cy = 0; cy < Y; ++cy)
      for (size_t t = 0; t < T; ++t) {
        double lam = intensity(cx, cy, t);
        rates[((cx * Y + cy) * T + t) * 2 + 1] = lam;  // outbound truth

        std::vector<std::pair<size_t, double>> dests;
        double wsum = 0;
        for (auto& d : nbrs) {
          long ax = static_cast<long>(cx) + d[0];
          long ay = static_cast<long>(cy) + d[1];
          if (ax < 0 || ay < 0 || ax >= static_cast<long>(X) || ay >= static_cast<long>(Y))
            continue;
          double w = dest_weight[(ax * Y + ay) * T + t];
          dests.emplace_back(static_cast<size_t>(ax) * Y + static_cast<size_t>(ay), w);
          wsum += w;
        }
        for (auto& [cell, w] : dests)
          rates[(cell * T + t) * 2 + 0] += lam * w / wsum;  // inbound truth

        RngStream cs = root.split(hash_combine(detail::kTripCount,
                                               (cx * Y + cy) * T + t));
        int n = cs.next_poisson(lam);
        for (int k = 0; k < n; ++k) {
          RngStream as = root.split(hash_combine(
              detail::kTripAttr, ((cx * Y + cy) * T + t) * 1000003 + k));
          double pick = as.next_uniform() * wsum;
          size_t dest = dests.back().first;
          for (auto& [cell, w] : dests) {
            if (pick < w) { dest = cell; break; }
            pick -= w;
          }
          int64_t start = grid.t0 + static_cast<int64_t>(t) * grid.interval_seconds() +
                          static_cast<int64_t>(as.next_uniform() * (grid.interval_seconds() - 60));
          int64_t travel = 60 + static_cast<int64_t>(as.next_uniform() * grid.interval_seconds());
          int64_t horizon_end = grid.t0 + static_cast<int64_t>(T) * grid.interval_seconds();
          int64_t end = std::min(start + travel, horizon_end - 1);
          TripRecord trip;
          trip.start_time = start;
          trip.end_time = end;
          trip.start_lon = grid.cell_center_lon(cx);
          trip.start_lat = grid.cell_center_lat(cy);
          trip.end_lon = grid.cell_center_lon(dest / Y);
          trip.end_lat = grid.cell_center_lat(dest % Y);
          out.trips.push_back(trip);
        }
      }
  return out;
}

inline void write_trips_csv(const std::string& path, const std::vector<TripRecord>& trips) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << "start_time,end_time,start_lon,start_lat,end_lon,end_lat\n";
  for (const auto& t : trips)
    f << t.start_time << "," << t.end_time << "," << t.start_lon << "," << t.start_lat
      << "," << t.end_lon << "," << t.end_lat << "\n";
}

inline void write_accidents_csv(const std::string& path,
                                const std::vector<AccidentRecord>& accidents) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << "time,lon,lat\n";
  for (const auto& a : accidents) f << a.time << "," << a.lon << "," << a.lat << "\n";
}

}  // namespace stcl
