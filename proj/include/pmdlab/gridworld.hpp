#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pmdlab/mdp.hpp"

namespace pmdlab {

struct GridObject {
  int x = 0;
  int y = 0;
  double reward = 1.0;
  bool respawn = true;  // false: consumable, tracked by a collected bit
};

// Rectangular grid with walls, rewarding objects and start cells.  Serializes
// to a text map (walls in the map body, objects and starts as header lines so
// they may share cells).
struct GridSpec {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> wall;  // row-major, size width*height
  std::vector<GridObject> objects;
  std::vector<int> start_cells;  // row-major cell indices
  double gamma = 0.99;
  double slip_prob = 0.0;

  int cell(int x, int y) const { return y * width + x; }
  bool is_wall(int x, int y) const { return wall[cell(x, y)] != 0; }
  // Throws std::invalid_argument: dimensions, walls on start/object cells,
  // duplicate start/object cells, rewards outside [0,1], no start cell, or a
  // start cell from which no positive-reward object is reachable
  // (4-connectivity over open cells).
  void validate() const;

  std::string to_text() const;
  static GridSpec from_text(const std::string& text);
};

// Five actions: up, down, left, right, no-op.  Moving into a wall or off the
// grid keeps the position.  With probability slip_prob the executed action is
// resampled uniformly from all five.  Rewards are granted on arrival at an
// object cell: respawning objects pay every arrival, consumable objects pay
// once and set a per-object collected bit carried in the state.
//
// States are ordered (open cell row-major) x (collected mask), mask fastest;
// with no consumable objects the state index is just the open-cell rank.
// The start distribution is uniform over start cells with mask 0.
TabularMdp compile(const GridSpec& spec);

constexpr int kGridActions = 5;  // up, down, left, right, stay

// Row-major ranks of open cells; -1 for walls.
std::vector<int> open_cell_ranks(const GridSpec& spec);

struct GridDistribution {
  int min_width = 4, max_width = 6;
  int min_height = 4, max_height = 6;
  double min_wall_density = 0.0, max_wall_density = 0.2;
  int min_objects = 1, max_objects = 2;
  std::vector<double> reward_values = {0.5, 1.0};
  int num_starts = 1;
  double slip_prob = 0.0;
  double respawn_prob = 0.5;  // probability each object respawns vs consumable
  double gamma = 0.99;
  uint64_t seed = 0;  // distribution identity; combined with the draw seed
};

// Rejection-samples a valid spec (deterministic in (dist.seed, seed)).
// Throws std::runtime_error if 200 attempts fail to produce a valid layout.
GridSpec sample_task(const GridDistribution& dist, uint64_t seed);

// Fixed named layouts for held-out evaluation; every spec validates and has a
// reachable positive reward.
const std::vector<std::pair<std::string, GridSpec>>& held_out_configs();

}  // namespace pmdlab
