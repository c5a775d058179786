#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "crswin/volume.hpp"

namespace crswin::testutil {

// All-pairs oracle built on its own coordinate bookkeeping: in-set voxels are
// collected as tuples, boundary membership is decided against a std::set, and
// the percentile interpolates between floor and ceil ranks.
inline double oracle_hd95(const LabelMask& a, const LabelMask& b, const std::array<double, 3>& sp) {
  using Coord = std::array<std::int64_t, 3>;
  const auto collect = [](const LabelMask& m) {
    std::set<Coord> in;
    for (std::int64_t z = 0; z < m.d; ++z)
      for (std::int64_t y = 0; y < m.h; ++y)
        for (std::int64_t x = 0; x < m.w; ++x)
          if (m.at(z, y, x) != 0) in.insert({z, y, x});
    return in;
  };
  const auto boundary = [](const std::set<Coord>& in) {
    std::vector<Coord> edge;
    const Coord steps[6] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (const Coord& c : in) {
      for (const Coord& s : steps) {
        if (!in.count({c[0] + s[0], c[1] + s[1], c[2] + s[2]})) {
          edge.push_back(c);
          break;
        }
      }
    }
    return edge;
  };
  const auto ea = boundary(collect(a));
  const auto eb = boundary(collect(b));
  if (ea.empty() && eb.empty()) return 0.0;
  if (ea.empty() || eb.empty()) return std::numeric_limits<double>::infinity();

  std::vector<double> dists;
  const auto shoot = [&](const std::vector<Coord>& from, const std::vector<Coord>& to) {
    for (const Coord& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const Coord& q : to) {
        const double dz = sp[0] * static_cast<double>(p[0] - q[0]);
        const double dy = sp[1] * static_cast<double>(p[1] - q[1]);
        const double dx = sp[2] * static_cast<double>(p[2] - q[2]);
        best = std::min(best, std::sqrt(dz * dz + dy * dy + dx * dx));
      }
      dists.push_back(best);
    }
  };
  shoot(ea, eb);
  shoot(eb, ea);
  std::sort(dists.begin(), dists.end());
  const double rank = 0.95 * static_cast<double>(dists.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = static_cast<std::size_t>(std::ceil(rank));
  return dists[lo] + (rank - std::floor(rank)) * (dists[hi] - dists[lo]);
}

}  // namespace crswin::testutil
