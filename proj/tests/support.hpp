#pragma once

// Map builders and small numeric helpers shared by the test binaries.

#include <cmath>
#include <vector>

#include "ttw/diffcore.hpp"
#include "ttw/gridworld.hpp"

namespace ttw::testing {

inline std::vector<LandmarkCategory> cats(std::initializer_list<int> ids) {
  std::vector<LandmarkCategory> out;
  for (int i : ids) out.push_back(static_cast<LandmarkCategory>(i));
  return out;
}

/// 4x4 map where every corner has a different observation. Nine single landmarks plus
/// seven pairs keep all 16 multisets distinct.
inline GridMap distinct_map(const std::string& id = "distinct") {
  std::vector<Corner> corners;
  for (int i = 0; i < 9; ++i) corners.push_back({cats({i})});
  for (int i = 0; i < 7; ++i) corners.push_back({cats({i, i + 1})});
  return GridMap(id, 4, 4, corners);
}

/// 4x4 map with the same landmark everywhere.
inline GridMap uniform_map(const std::string& id = "uniform", int category = 4) {
  return GridMap(id, 4, 4, std::vector<Corner>(16, Corner{cats({category})}));
}

inline GridMap empty_map(const std::string& id = "empty") {
  return GridMap(id, 4, 4, std::vector<Corner>(16));
}

inline GridMap random_map(Rng& rng, const std::string& id, int w = 4, int h = 4) {
  MapGenConfig cfg;
  cfg.width = w;
  cfg.height = h;
  GridMap m = generate_neighborhood(cfg, rng);
  return GridMap(id, w, h, m.corners());
}

inline diff::Tensor random_tensor(diff::Shape shape, Rng& rng, double sd = 1.0) {
  diff::Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal(0.0, sd);
  return t;
}

inline double max_abs_diff(const diff::Tensor& a, const diff::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline std::vector<double> to_vec(const diff::Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace ttw::testing
