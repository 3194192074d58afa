#pragma once

// Reference implementations written separately from the library code, used
// to check it. Slow on purpose.

#include "xri/model.hpp"
#include "xri/sync_engine.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

namespace xri::oracle {

// HSV -> RGB via the k-function form, real-valued (no quantisation).
inline std::array<double, 3> hsv_to_rgb_k(double h_deg, double s, double v) {
  auto f = [&](double n) {
    const double k = std::fmod(n + h_deg / 60.0, 6.0);
    return v - v * s * std::max(0.0, std::min({k, 4.0 - k, 1.0}));
  };
  return {f(5), f(3), f(1)};
}

// Searches the API grids for the HSB triple closest to `c`.
inline ColorHSB brute_force_hsb(const ColorRGB& c) {
  const double v = std::max({c.r, c.g, c.b});
  const double chroma = v - std::min({c.r, c.g, c.b});
  const double s = v > 0 ? chroma / v : 0.0;

  ColorHSB out;
  out.on = v > 0;

  int best_bri = 1;
  for (int b = 1; b <= 254; ++b) {
    if (std::abs(b / 254.0 - v) < std::abs(best_bri / 254.0 - v)) best_bri = b;
  }
  int best_sat = 0;
  for (int q = 0; q <= 254; ++q) {
    if (std::abs(q / 254.0 - s) < std::abs(best_sat / 254.0 - s)) best_sat = q;
  }
  out.bri = static_cast<std::uint8_t>(best_bri);
  out.sat = static_cast<std::uint8_t>(best_sat);
  if (chroma <= 0) return out;

  auto err = [&](int hue) {
    const auto rgb = hsv_to_rgb_k(hue / 65535.0 * 360.0, s, v);
    return std::max({std::abs(rgb[0] - c.r), std::abs(rgb[1] - c.g), std::abs(rgb[2] - c.b)});
  };
  int best = 0;
  double best_err = err(0);
  for (int h = 0; h < 65536; h += 16) {
    const double e = err(h);
    if (e < best_err) best_err = e, best = h;
  }
  const int centre = best;
  for (int h = centre - 32; h <= centre + 32; ++h) {
    const int w = (h + 65536) % 65536;
    const double e = err(w);
    if (e < best_err) best_err = e, best = w;
  }
  out.hue = static_cast<std::uint16_t>(best);
  return out;
}

inline int hue_gap(int a, int b) {
  const int d = std::abs(a - b);
  return std::min(d, 65536 - d);
}

// Rodrigues rotation of `p` about the unit axis `u` by `angle` (right-handed).
inline Vector3 rodrigues(const Vector3& p, const Vector3& u, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  const double K[3][3] = {{0, -u.z, u.y}, {u.z, 0, -u.x}, {-u.y, u.x, 0}};
  double K2[3][3] = {};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) K2[i][j] += K[i][k] * K[k][j];
  double R[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) R[i][j] = (i == j ? 1.0 : 0.0) + s * K[i][j] + (1 - c) * K2[i][j];
  const double v[3] = {p.x, p.y, p.z};
  double o[3] = {0, 0, 0};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) o[i] += R[i][j] * v[j];
  return {o[0], o[1], o[2]};
}

// Millisecond-resolution noise: expand every sample into individual
// milliseconds, find maximal incoherent runs, keep runs longer than grace,
// count kept milliseconds inside the window.
inline double span_sum_noise(const std::vector<CoherenceSample>& samples, Window w, std::int64_t grace) {
  std::map<std::int64_t, bool> ms;  // covered millisecond -> incoherent
  for (const auto& s : samples) {
    for (std::int64_t t = s.start.ms; t < s.start.ms + s.duration_ms; ++t) ms[t] = !s.coherent;
  }
  std::int64_t counted = 0;
  auto it = ms.begin();
  while (it != ms.end()) {
    if (!it->second) {
      ++it;
      continue;
    }
    std::vector<std::int64_t> run{it->first};
    auto next = std::next(it);
    while (next != ms.end() && next->second && next->first == run.back() + 1) {
      run.push_back(next->first);
      ++next;
    }
    if (static_cast<std::int64_t>(run.size()) > grace) {
      for (auto t : run) counted += (t >= w.start.ms && t < w.end.ms) ? 1 : 0;
    }
    it = next;
  }
  return static_cast<double>(counted) / static_cast<double>(w.end.ms - w.start.ms);
}

}  // namespace xri::oracle
