#include "ttw/gridworld.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <set>

namespace ttw {

namespace {

constexpr std::array<std::string_view, kNumLandmarkCategories> kLandmarkNames = {
    "Bar", "Playfield", "Bank", "Hotel", "Shop", "Subway", "CoffeeShop", "Restaurant", "Theater"};
constexpr std::array<std::string_view, kNumAgnosticActions> kActionNames = {"Left", "Right", "Up",
                                                                            "Down"};

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string intersection_id(const std::string& base, int x, int y) {
  return base + "/" + std::to_string(x / 2) + "," + std::to_string(y / 2);
}

std::vector<std::string> intersections_of(const std::string& base, int x0, int y0, int w, int h) {
  std::set<std::string> ids;
  for (int x = x0; x < x0 + w; ++x) {
    for (int y = y0; y < y0 + h; ++y) ids.insert(intersection_id(base, x, y));
  }
  return {ids.begin(), ids.end()};
}

int draw_categorical(const std::vector<double>& weights, Rng& rng) {
  std::discrete_distribution<int> dist(weights.begin(), weights.end());
  return dist(rng.engine());
}

}  // namespace

std::string_view to_string(LandmarkCategory c) { return kLandmarkNames[static_cast<int>(c)]; }
std::string_view to_string(AgnosticAction a) { return kActionNames[static_cast<int>(a)]; }

LandmarkCategory parse_landmark(std::string_view name) {
  for (int i = 0; i < kNumLandmarkCategories; ++i) {
    if (kLandmarkNames[i] == name) return static_cast<LandmarkCategory>(i);
  }
  throw std::invalid_argument("unknown landmark category: " + std::string(name));
}

AgnosticAction parse_action(std::string_view name) {
  for (int i = 0; i < kNumAgnosticActions; ++i) {
    if (kActionNames[i] == name) return static_cast<AgnosticAction>(i);
  }
  throw std::invalid_argument("unknown action: " + std::string(name));
}

Delta delta(AgnosticAction a) {
  switch (a) {
    case AgnosticAction::Left: return {-1, 0};
    case AgnosticAction::Right: return {1, 0};
    case AgnosticAction::Up: return {0, 1};
    case AgnosticAction::Down: return {0, -1};
  }
  return {0, 0};
}

AgnosticAction inverse(AgnosticAction a) {
  switch (a) {
    case AgnosticAction::Left: return AgnosticAction::Right;
    case AgnosticAction::Right: return AgnosticAction::Left;
    case AgnosticAction::Up: return AgnosticAction::Down;
    case AgnosticAction::Down: return AgnosticAction::Up;
  }
  return a;
}

OrientedStep step_oriented(OrientedPose loc, OrientedAction a, const Bounds& bounds) {
  const int o = static_cast<int>(loc.o);
  switch (a) {
    case OrientedAction::TurnLeft:
      loc.o = static_cast<Orientation>((o + 3) % 4);
      return {loc, true};
    case OrientedAction::TurnRight:
      loc.o = static_cast<Orientation>((o + 1) % 4);
      return {loc, true};
    case OrientedAction::Forward: {
      // N, E, S, W -> (0,1), (1,0), (0,-1), (-1,0)
      static constexpr std::array<Delta, 4> kForward = {{{0, 1}, {1, 0}, {0, -1}, {-1, 0}}};
      const int nx = loc.x + kForward[o].dx;
      const int ny = loc.y + kForward[o].dy;
      if (!bounds.contains(nx, ny)) return {loc, false};
      loc.x = nx;
      loc.y = ny;
      return {loc, true};
    }
  }
  return {loc, false};
}

Position step_agnostic(Position loc, AgnosticAction a, const Bounds& bounds) {
  const Delta d = delta(a);
  int nx = loc.x + d.dx;
  int ny = loc.y + d.dy;
  if (bounds.wrap) {
    nx = (nx + bounds.width) % bounds.width;
    ny = (ny + bounds.height) % bounds.height;
    return {nx, ny};
  }
  if (!bounds.contains(nx, ny)) return loc;
  return {nx, ny};
}

GridMap::GridMap(std::string map_id, int width, int height, std::vector<Corner> corners,
                 std::vector<std::string> intersections)
    : map_id_(std::move(map_id)),
      width_(width),
      height_(height),
      corners_(std::move(corners)),
      intersections_(std::move(intersections)) {
  if (width_ <= 0 || height_ <= 0) throw std::invalid_argument("map dimensions must be positive");
  if (static_cast<int>(corners_.size()) != width_ * height_) {
    throw std::invalid_argument("map " + map_id_ + ": expected " +
                                std::to_string(width_ * height_) + " corners, got " +
                                std::to_string(corners_.size()));
  }
  if (intersections_.empty()) intersections_ = intersections_of(map_id_, 0, 0, width_, height_);
}

const Corner& GridMap::corner(int x, int y) const {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) {
    throw std::out_of_range("corner (" + std::to_string(x) + "," + std::to_string(y) +
                            ") outside map " + map_id_);
  }
  return corners_[static_cast<std::size_t>(x * height_ + y)];
}

GridMap GridMap::window(int x0, int y0, int w, int h, std::string map_id) const {
  if (x0 < 0 || y0 < 0 || x0 + w > width_ || y0 + h > height_) {
    throw std::out_of_range("window exceeds map " + map_id_);
  }
  std::vector<Corner> corners;
  corners.reserve(static_cast<std::size_t>(w * h));
  for (int x = x0; x < x0 + w; ++x) {
    for (int y = y0; y < y0 + h; ++y) corners.push_back(corner(x, y));
  }
  return GridMap(std::move(map_id), w, h, std::move(corners),
                 intersections_of(map_id_, x0, y0, w, h));
}

nlohmann::json GridMap::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const Corner& c : corners_) {
    nlohmann::json names = nlohmann::json::array();
    for (LandmarkCategory l : c.landmarks) names.push_back(std::string(to_string(l)));
    rows.push_back(std::move(names));
  }
  return {{"map_id", map_id_}, {"width", width_}, {"height", height_}, {"corners", rows}};
}

GridMap GridMap::from_json(const nlohmann::json& j) {
  std::vector<Corner> corners;
  for (const auto& names : j.at("corners")) {
    Corner c;
    for (const auto& n : names) c.landmarks.push_back(parse_landmark(n.get<std::string>()));
    corners.push_back(std::move(c));
  }
  return GridMap(j.at("map_id").get<std::string>(), j.at("width").get<int>(),
                 j.at("height").get<int>(), std::move(corners));
}

Observation observe(Position loc, const GridMap& map) {
  const Corner& c = map.corner(loc.x, loc.y);
  Observation obs;
  if (c.landmarks.empty()) {
    obs.push_back(kEmptyCorner);
    return obs;
  }
  obs.reserve(c.landmarks.size());
  for (LandmarkCategory l : c.landmarks) obs.push_back(static_cast<int>(l));
  std::sort(obs.begin(), obs.end());
  return obs;
}

nlohmann::json Episode::to_json() const {
  nlohmann::json acts = nlohmann::json::array();
  for (AgnosticAction a : actions) acts.push_back(std::string(to_string(a)));
  nlohmann::json obs = nlohmann::json::array();
  for (const Observation& o : observations) {
    nlohmann::json names = nlohmann::json::array();
    for (int s : o) {
      names.push_back(s == kEmptyCorner ? std::string("EmptyCorner")
                                        : std::string(to_string(static_cast<LandmarkCategory>(s))));
    }
    obs.push_back(std::move(names));
  }
  return {{"map_id", map_id},
          {"start", {start.x, start.y}},
          {"actions", acts},
          {"observations", obs},
          {"target", {target.x, target.y}}};
}

Episode Episode::from_json(const nlohmann::json& j) {
  Episode ep;
  ep.map_id = j.at("map_id").get<std::string>();
  ep.start = {j.at("start").at(0).get<int>(), j.at("start").at(1).get<int>()};
  ep.target = {j.at("target").at(0).get<int>(), j.at("target").at(1).get<int>()};
  for (const auto& a : j.at("actions")) ep.actions.push_back(parse_action(a.get<std::string>()));
  for (const auto& names : j.at("observations")) {
    Observation o;
    for (const auto& n : names) {
      const auto s = n.get<std::string>();
      o.push_back(s == "EmptyCorner" ? kEmptyCorner : static_cast<int>(parse_landmark(s)));
    }
    std::sort(o.begin(), o.end());
    ep.observations.push_back(std::move(o));
  }
  return ep;
}

Episode build_episode(const GridMap& map, Position start, std::vector<AgnosticAction> actions,
                      const Bounds& bounds) {
  Episode ep;
  ep.map_id = map.map_id();
  ep.start = start;
  ep.observations.reserve(actions.size() + 1);
  Position loc = start;
  ep.observations.push_back(observe(loc, map));
  for (AgnosticAction a : actions) {
    loc = step_agnostic(loc, a, bounds);
    ep.observations.push_back(observe(loc, map));
  }
  ep.actions = std::move(actions);
  ep.target = loc;
  return ep;
}

Episode sample_episode(const GridMap& map, int T, Rng& rng) {
  if (T < 0) throw std::invalid_argument("episode length T must be >= 0");
  const Position start{rng.uniform_int(map.width()), rng.uniform_int(map.height())};
  std::vector<AgnosticAction> actions(static_cast<std::size_t>(T));
  for (auto& a : actions) a = static_cast<AgnosticAction>(rng.uniform_int(kNumAgnosticActions));
  return build_episode(map, start, std::move(actions), map.bounds());
}

std::vector<double> MapGenConfig::default_category_weights() {
  // Bar, Playfield, Bank, Hotel, Shop, Subway, CoffeeShop, Restaurant, Theater
  return {0.08, 0.04, 0.08, 0.06, 0.26, 0.06, 0.10, 0.24, 0.08};
}

void MapGenConfig::validate() const {
  if (width <= 0 || height <= 0) throw std::invalid_argument("map dimensions must be positive");
  auto check = [](const std::vector<double>& w, std::string_view what) {
    if (w.empty()) throw std::invalid_argument(std::string(what) + " weights are empty");
    double total = 0.0;
    for (double v : w) {
      if (!(v >= 0.0)) throw std::invalid_argument(std::string(what) + " weights must be >= 0");
      total += v;
    }
    if (!(total > 0.0)) throw std::invalid_argument(std::string(what) + " weights have zero mass");
  };
  check(count_weights, "count");
  check(category_weights, "category");
  if (category_weights.size() != kNumLandmarkCategories) {
    throw std::invalid_argument("category weights must have 9 entries");
  }
}

std::string make_map_id(std::uint64_t seed, const MapGenConfig& cfg) {
  std::string key = std::to_string(seed) + ":" + std::to_string(cfg.width) + "x" +
                    std::to_string(cfg.height);
  char buf[32];
  for (double w : cfg.count_weights) {
    std::snprintf(buf, sizeof buf, ":%.17g", w);
    key += buf;
  }
  key += "|";
  for (double w : cfg.category_weights) {
    std::snprintf(buf, sizeof buf, ":%.17g", w);
    key += buf;
  }
  return hex64(fnv1a(key));
}

GridMap generate_neighborhood(const MapGenConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<Corner> corners(static_cast<std::size_t>(cfg.width * cfg.height));
  for (Corner& c : corners) {
    const int count = draw_categorical(cfg.count_weights, rng);
    for (int k = 0; k < count; ++k) {
      c.landmarks.push_back(static_cast<LandmarkCategory>(draw_categorical(cfg.category_weights, rng)));
    }
  }
  return GridMap(make_map_id(rng.seed(), cfg), cfg.width, cfg.height, std::move(corners));
}

std::vector<GridMap> extract_windows(const GridMap& neighborhood, int window, int stride) {
  std::vector<GridMap> out;
  for (int x0 = 0; x0 + window <= neighborhood.width(); x0 += stride) {
    for (int y0 = 0; y0 + window <= neighborhood.height(); y0 += stride) {
      out.push_back(neighborhood.window(
          x0, y0, window, window,
          neighborhood.map_id() + "@" + std::to_string(x0) + "," + std::to_string(y0)));
    }
  }
  return out;
}

namespace {

int overlap(const GridMap& m, const std::set<std::string>& blocked) {
  int n = 0;
  for (const auto& id : m.intersections()) n += static_cast<int>(blocked.count(id));
  return n;
}

// Picks the candidate with maximal overlap with `blocked`; earliest in `order` wins ties.
std::optional<std::size_t> pick_most_overlapping(const std::vector<std::size_t>& order,
                                                 const std::vector<bool>& taken,
                                                 const std::vector<GridMap>& maps,
                                                 const std::set<std::string>& blocked) {
  std::optional<std::size_t> best;
  int best_overlap = -1;
  for (std::size_t i : order) {
    if (taken[i]) continue;
    const int ov = overlap(maps[i], blocked);
    if (ov > best_overlap) {
      best_overlap = ov;
      best = i;
    }
  }
  return best;
}

}  // namespace

SplitSpec make_splits(const std::vector<GridMap>& maps, const SplitRule& rule) {
  if (maps.size() < 3) throw SplitError("need at least 3 maps to split");
  if (rule.n_valid < 1 || rule.n_test < 1 || rule.n_train < 0) {
    throw SplitError("split sizes must be positive");
  }
  {
    std::set<std::string> ids;
    for (const auto& m : maps) {
      if (!ids.insert(m.map_id()).second) throw SplitError("duplicate map_id " + m.map_id());
    }
  }

  std::vector<std::size_t> order(maps.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(rule.seed);
  std::shuffle(order.begin(), order.end(), rng.engine());

  std::vector<bool> taken(maps.size(), false);
  std::set<std::string> blocked;  // intersections training maps must avoid
  SplitSpec split;

  // Test maps are packed together so they block as few training windows as possible.
  for (int k = 0; k < rule.n_test; ++k) {
    auto i = pick_most_overlapping(order, taken, maps, blocked);
    if (!i) throw SplitError("not enough maps for the test split");
    taken[*i] = true;
    for (const auto& id : maps[*i].intersections()) blocked.insert(id);
    split.test.push_back(maps[*i]);
  }

  // A validation map needs one reserved (novel) intersection; prefer ones already blocked.
  for (int k = 0; k < rule.n_valid; ++k) {
    auto i = pick_most_overlapping(order, taken, maps, blocked);
    if (!i) throw SplitError("not enough maps for the validation split");
    taken[*i] = true;
    const auto& ids = maps[*i].intersections();
    if (overlap(maps[*i], blocked) == 0) blocked.insert(ids.front());
    split.valid.push_back(maps[*i]);
  }

  for (std::size_t i : order) {
    if (taken[i] || overlap(maps[i], blocked) > 0) continue;
    if (rule.n_train > 0 && static_cast<int>(split.train.size()) >= rule.n_train) break;
    taken[i] = true;
    split.train.push_back(maps[i]);
  }
  if (split.train.empty() ||
      (rule.n_train > 0 && static_cast<int>(split.train.size()) < rule.n_train)) {
    throw SplitError("infeasible split: only " + std::to_string(split.train.size()) +
                     " maps avoid validation/test intersections");
  }
  validate_split(split);
  return split;
}

void validate_split(const SplitSpec& split) {
  std::set<std::string> ids;
  std::set<std::string> train_intersections;
  auto add_ids = [&](const std::vector<GridMap>& maps, std::string_view name) {
    if (maps.empty()) throw SplitError(std::string(name) + " split is empty");
    for (const auto& m : maps) {
      if (!ids.insert(m.map_id()).second) {
        throw SplitError("map " + m.map_id() + " appears in more than one split");
      }
    }
  };
  add_ids(split.train, "train");
  add_ids(split.valid, "valid");
  add_ids(split.test, "test");
  for (const auto& m : split.train) {
    train_intersections.insert(m.intersections().begin(), m.intersections().end());
  }
  for (const auto& m : split.valid) {
    if (overlap(m, train_intersections) == static_cast<int>(m.intersections().size())) {
      throw SplitError("validation map " + m.map_id() + " has no intersection absent from training");
    }
  }
  for (const auto& m : split.test) {
    if (overlap(m, train_intersections) > 0) {
      throw SplitError("test map " + m.map_id() + " shares an intersection with training");
    }
  }
}

}  // namespace ttw
