#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ttw/rng.hpp"

namespace ttw {

enum class Orientation : std::uint8_t { N = 0, E = 1, S = 2, W = 3 };
enum class OrientedAction : std::uint8_t { TurnLeft, TurnRight, Forward };
enum class AgnosticAction : std::uint8_t { Left = 0, Right = 1, Up = 2, Down = 3 };

inline constexpr int kNumAgnosticActions = 4;
inline constexpr std::array<AgnosticAction, 4> kAgnosticActions = {
    AgnosticAction::Left, AgnosticAction::Right, AgnosticAction::Up, AgnosticAction::Down};

enum class LandmarkCategory : std::uint8_t {
  Bar,
  Playfield,
  Bank,
  Hotel,
  Shop,
  Subway,
  CoffeeShop,
  Restaurant,
  Theater,
};

inline constexpr int kNumLandmarkCategories = 9;
/// Observation symbols are the 9 categories plus the EmptyCorner symbol.
inline constexpr int kEmptyCorner = 9;
inline constexpr int kNumSymbols = 10;

std::string_view to_string(LandmarkCategory c);
std::string_view to_string(AgnosticAction a);
LandmarkCategory parse_landmark(std::string_view name);
AgnosticAction parse_action(std::string_view name);

struct Position {
  int x = 0;
  int y = 0;
  friend bool operator==(const Position&, const Position&) = default;
  friend auto operator<=>(const Position&, const Position&) = default;
};

struct OrientedPose {
  int x = 0;
  int y = 0;
  Orientation o = Orientation::N;
  friend bool operator==(const OrientedPose&, const OrientedPose&) = default;
};

/// Walkable rectangle. `wrap` turns it into a torus (used by oracle tests only).
struct Bounds {
  int width = 0;
  int height = 0;
  bool wrap = false;

  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  int cells() const { return width * height; }
  int index(Position p) const { return p.x * height + p.y; }
  Position position(int index) const { return {index / height, index % height}; }
};

struct Delta {
  int dx;
  int dy;
};

Delta delta(AgnosticAction a);
AgnosticAction inverse(AgnosticAction a);

struct OrientedStep {
  OrientedPose pose;
  bool moved;
};

OrientedStep step_oriented(OrientedPose loc, OrientedAction a, const Bounds& bounds);
Position step_agnostic(Position loc, AgnosticAction a, const Bounds& bounds);

/// Observation: sorted multiset of symbol ids in [0, kNumSymbols).
using Observation = std::vector<int>;

struct Corner {
  std::vector<LandmarkCategory> landmarks;
};

/// G1 x G2 landmark map. Corners are stored row-major over (x, y): index = x * height + y.
class GridMap {
 public:
  GridMap(std::string map_id, int width, int height, std::vector<Corner> corners,
          std::vector<std::string> intersections = {});

  const std::string& map_id() const { return map_id_; }
  int width() const { return width_; }
  int height() const { return height_; }
  Bounds bounds() const { return {width_, height_, false}; }
  int cells() const { return width_ * height_; }

  const Corner& corner(int x, int y) const;
  const std::vector<Corner>& corners() const { return corners_; }

  /// Identifiers of the 2x2-corner intersections the map covers. Used by splitting.
  const std::vector<std::string>& intersections() const { return intersections_; }

  /// Sub-window copy. Intersection ids are expressed in this map's coordinates.
  GridMap window(int x0, int y0, int w, int h, std::string map_id) const;

  nlohmann::json to_json() const;
  static GridMap from_json(const nlohmann::json& j);

 private:
  std::string map_id_;
  int width_;
  int height_;
  std::vector<Corner> corners_;
  std::vector<std::string> intersections_;
};

Observation observe(Position loc, const GridMap& map);

struct Episode {
  std::string map_id;
  Position start;
  std::vector<AgnosticAction> actions;
  std::vector<Observation> observations;
  Position target;

  int length() const { return static_cast<int>(actions.size()); }
  nlohmann::json to_json() const;
  static Episode from_json(const nlohmann::json& j);
};

Episode sample_episode(const GridMap& map, int T, Rng& rng);
/// Deterministic episode for a given start and action sequence.
Episode build_episode(const GridMap& map, Position start, std::vector<AgnosticAction> actions,
                      const Bounds& bounds);

struct MapGenConfig {
  int width = 4;
  int height = 4;
  /// Weights over the per-corner landmark count 0, 1, 2, ...
  std::vector<double> count_weights = {0.45, 0.45, 0.10};
  /// Weights over the 9 landmark categories.
  std::vector<double> category_weights = default_category_weights();

  static std::vector<double> default_category_weights();
  void validate() const;
};

std::string make_map_id(std::uint64_t seed, const MapGenConfig& cfg);

GridMap generate_neighborhood(const MapGenConfig& cfg, Rng& rng);

/// Splits whole 4x4 (or any) windows of larger neighborhoods into 4x4 maps aligned to
/// intersections (2x2 corner blocks).
std::vector<GridMap> extract_windows(const GridMap& neighborhood, int window, int stride);

struct SplitRule {
  /// 0 means every map eligible for training after valid/test are fixed.
  int n_train = 0;
  int n_valid = 1;
  int n_test = 1;
  std::uint64_t seed = 0;
};

struct SplitSpec {
  std::vector<GridMap> train;
  std::vector<GridMap> valid;
  std::vector<GridMap> test;
};

class SplitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

SplitSpec make_splits(const std::vector<GridMap>& maps, const SplitRule& rule);
/// Throws SplitError naming the first violated invariant.
void validate_split(const SplitSpec& split);

}  // namespace ttw
