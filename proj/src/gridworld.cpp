#include "pmdlab/gridworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "pmdlab/rng.hpp"

namespace pmdlab {
namespace {

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

// up, down, left, right, stay; y grows downward.
constexpr int kDx[kGridActions] = {0, 0, -1, 1, 0};
constexpr int kDy[kGridActions] = {-1, 1, 0, 0, 0};

int move_cell(const GridSpec& spec, int cell, int action) {
  const int x = cell % spec.width;
  const int y = cell / spec.width;
  const int nx = x + kDx[action];
  const int ny = y + kDy[action];
  if (nx < 0 || nx >= spec.width || ny < 0 || ny >= spec.height || spec.is_wall(nx, ny))
    return cell;
  return spec.cell(nx, ny);
}

std::vector<uint8_t> reachable_from(const GridSpec& spec, int start_cell) {
  std::vector<uint8_t> seen(spec.wall.size(), 0);
  std::deque<int> queue{start_cell};
  seen[start_cell] = 1;
  while (!queue.empty()) {
    const int c = queue.front();
    queue.pop_front();
    for (int a = 0; a < 4; ++a) {  // the four moves; stay adds nothing
      const int d = move_cell(spec, c, a);
      if (!seen[d]) {
        seen[d] = 1;
        queue.push_back(d);
      }
    }
  }
  return seen;
}

}  // namespace

void GridSpec::validate() const {
  require(width >= 1 && height >= 1, "grid dimensions must be positive");
  require(static_cast<int>(wall.size()) == width * height, "wall map size mismatch");
  for (uint8_t w : wall) require(w == 0 || w == 1, "wall entries must be 0 or 1");
  require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
  require(slip_prob >= 0.0 && slip_prob <= 1.0, "slip probability must lie in [0, 1]");
  require(!start_cells.empty(), "grid needs at least one start cell");
  std::set<int> seen_starts;
  for (int c : start_cells) {
    require(c >= 0 && c < width * height, "start cell out of range");
    require(wall[c] == 0, "start cell sits on a wall");
    require(seen_starts.insert(c).second, "duplicate start cell");
  }
  std::set<int> object_cells;
  int num_consumable = 0;
  for (const GridObject& obj : objects) {
    require(obj.x >= 0 && obj.x < width && obj.y >= 0 && obj.y < height,
            "object coordinates out of range");
    require(!is_wall(obj.x, obj.y), "object sits on a wall");
    require(std::isfinite(obj.reward) && obj.reward >= 0.0 && obj.reward <= 1.0,
            "object rewards must lie in [0, 1]");
    require(object_cells.insert(cell(obj.x, obj.y)).second, "duplicate object cell");
    if (!obj.respawn) ++num_consumable;
  }
  require(num_consumable <= 16, "too many consumable objects");
  for (int sc : start_cells) {
    const std::vector<uint8_t> seen = reachable_from(*this, sc);
    bool found = false;
    for (const GridObject& obj : objects)
      if (obj.reward > 0.0 && seen[cell(obj.x, obj.y)]) {
        found = true;
        break;
      }
    require(found, "no positive-reward object reachable from some start cell");
  }
}

std::vector<int> open_cell_ranks(const GridSpec& spec) {
  std::vector<int> rank(spec.wall.size(), -1);
  int next = 0;
  for (size_t c = 0; c < spec.wall.size(); ++c)
    if (spec.wall[c] == 0) rank[c] = next++;
  return rank;
}

TabularMdp compile(const GridSpec& spec) {
  spec.validate();
  const std::vector<int> rank = open_cell_ranks(spec);
  const int num_open = *std::max_element(rank.begin(), rank.end()) + 1;

  // Consumable objects get mask bits in declaration order.
  std::unordered_map<int, int> object_at;  // cell -> index into spec.objects
  std::vector<int> consumable_bit(spec.objects.size(), -1);
  int num_consumable = 0;
  for (size_t i = 0; i < spec.objects.size(); ++i) {
    const GridObject& obj = spec.objects[i];
    object_at[spec.cell(obj.x, obj.y)] = static_cast<int>(i);
    if (!obj.respawn) consumable_bit[i] = num_consumable++;
  }
  const int num_masks = 1 << num_consumable;
  const int num_states = num_open * num_masks;

  TabularMdp mdp;
  mdp.gamma = spec.gamma;
  mdp.transition = Eigen::MatrixXd::Zero(num_states * kGridActions, num_states);
  mdp.reward = Eigen::MatrixXd::Zero(num_states, kGridActions);
  mdp.start = Eigen::VectorXd::Zero(num_states);

  for (size_t c = 0; c < spec.wall.size(); ++c) {
    if (spec.wall[c] != 0) continue;
    for (int mask = 0; mask < num_masks; ++mask) {
      const int s = rank[c] * num_masks + mask;
      for (int a = 0; a < kGridActions; ++a) {
        const int row = s * kGridActions + a;
        for (int e = 0; e < kGridActions; ++e) {
          const double p = spec.slip_prob / kGridActions + (e == a ? 1.0 - spec.slip_prob : 0.0);
          if (p == 0.0) continue;
          const int d = move_cell(spec, static_cast<int>(c), e);
          double reward = 0.0;
          int next_mask = mask;
          if (auto it = object_at.find(d); it != object_at.end()) {
            const GridObject& obj = spec.objects[it->second];
            const int bit = consumable_bit[it->second];
            if (bit < 0) {
              reward = obj.reward;
            } else if (((mask >> bit) & 1) == 0) {
              reward = obj.reward;
              next_mask = mask | (1 << bit);
            }
          }
          mdp.transition(row, rank[d] * num_masks + next_mask) += p;
          mdp.reward(s, a) += p * reward;
        }
      }
    }
  }
  for (int sc : spec.start_cells)
    mdp.start[rank[sc] * num_masks] += 1.0 / static_cast<double>(spec.start_cells.size());
  mdp.validate();
  return mdp;
}

std::string GridSpec::to_text() const {
  std::ostringstream out;
  out << "pmdlab-grid v1\n";
  out << "width " << width << "\n";
  out << "height " << height << "\n";
  out << "gamma " << fmt17(gamma) << "\n";
  out << "slip " << fmt17(slip_prob) << "\n";
  for (int c : start_cells) out << "start " << (c % width) << " " << (c / width) << "\n";
  for (const GridObject& obj : objects)
    out << "object " << obj.x << " " << obj.y << " " << fmt17(obj.reward) << " "
        << (obj.respawn ? "respawn" : "consumable") << "\n";
  out << "map\n";
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) out << (is_wall(x, y) ? '#' : '.');
    out << "\n";
  }
  return out.str();
}

GridSpec GridSpec::from_text(const std::string& text) {
  std::istringstream in(text);
  std::string magic, version;
  in >> magic >> version;
  require(magic == "pmdlab-grid" && version == "v1", "unrecognized grid file header");
  GridSpec spec;
  spec.start_cells.clear();
  std::vector<std::pair<int, int>> starts_xy;
  std::string key;
  bool saw_map = false;
  while (in >> key) {
    if (key == "width") {
      in >> spec.width;
    } else if (key == "height") {
      in >> spec.height;
    } else if (key == "gamma") {
      in >> spec.gamma;
    } else if (key == "slip") {
      in >> spec.slip_prob;
    } else if (key == "start") {
      int x = 0, y = 0;
      in >> x >> y;
      starts_xy.emplace_back(x, y);
    } else if (key == "object") {
      GridObject obj;
      std::string kind;
      in >> obj.x >> obj.y >> obj.reward >> kind;
      require(kind == "respawn" || kind == "consumable", "grid file: bad object kind");
      obj.respawn = (kind == "respawn");
      spec.objects.push_back(obj);
    } else if (key == "map") {
      saw_map = true;
      break;
    } else {
      throw std::invalid_argument("grid file: unknown key '" + key + "'");
    }
    require(bool(in), "grid file: malformed value for key '" + key + "'");
  }
  require(saw_map, "grid file: missing map section");
  require(spec.width >= 1 && spec.height >= 1, "grid file: map needs positive dimensions");
  std::string line;
  std::getline(in, line);  // consume end of the "map" line
  spec.wall.assign(static_cast<size_t>(spec.width) * spec.height, 0);
  for (int y = 0; y < spec.height; ++y) {
    require(static_cast<bool>(std::getline(in, line)), "grid file: truncated map body");
    require(static_cast<int>(line.size()) == spec.width, "grid file: map row width mismatch");
    for (int x = 0; x < spec.width; ++x) {
      require(line[x] == '#' || line[x] == '.', "grid file: map characters must be '#' or '.'");
      spec.wall[spec.cell(x, y)] = line[x] == '#' ? 1 : 0;
    }
  }
  for (auto [x, y] : starts_xy) {
    require(x >= 0 && x < spec.width && y >= 0 && y < spec.height,
            "grid file: start coordinates out of range");
    spec.start_cells.push_back(spec.cell(x, y));
  }
  spec.validate();
  return spec;
}

GridSpec sample_task(const GridDistribution& dist, uint64_t seed) {
  require(dist.min_width >= 1 && dist.max_width >= dist.min_width, "bad width range");
  require(dist.min_height >= 1 && dist.max_height >= dist.min_height, "bad height range");
  require(dist.min_objects >= 0 && dist.max_objects >= dist.min_objects, "bad object range");
  require(!dist.reward_values.empty(), "reward_values must be non-empty");
  require(dist.num_starts >= 1, "num_starts must be positive");
  const uint64_t key = mix_seed(dist.seed, seed);
  for (int attempt = 0; attempt < 200; ++attempt) {
    Philox rng(key, stream_id(streams::kGridSample, 0, static_cast<uint64_t>(attempt)));
    GridSpec spec;
    spec.gamma = dist.gamma;
    spec.slip_prob = dist.slip_prob;
    spec.width = dist.min_width + static_cast<int>(rng.next_below(dist.max_width - dist.min_width + 1));
    spec.height =
        dist.min_height + static_cast<int>(rng.next_below(dist.max_height - dist.min_height + 1));
    const double density =
        dist.min_wall_density + rng.next_double() * (dist.max_wall_density - dist.min_wall_density);
    spec.wall.assign(static_cast<size_t>(spec.width) * spec.height, 0);
    for (auto& w : spec.wall) w = rng.next_double() < density ? 1 : 0;
    std::vector<int> open;
    for (size_t c = 0; c < spec.wall.size(); ++c)
      if (spec.wall[c] == 0) open.push_back(static_cast<int>(c));
    const int num_objects =
        dist.min_objects + static_cast<int>(rng.next_below(dist.max_objects - dist.min_objects + 1));
    if (static_cast<int>(open.size()) < std::max(dist.num_starts, num_objects)) continue;
    std::set<int> used;
    bool ok = true;
    for (int i = 0; i < dist.num_starts && ok; ++i) {
      ok = false;
      for (int tries = 0; tries < 100; ++tries) {
        const int c = open[rng.next_below(static_cast<int64_t>(open.size()))];
        if (used.insert(c).second) {
          spec.start_cells.push_back(c);
          ok = true;
          break;
        }
      }
    }
    std::set<int> object_used;  // objects may share cells with starts, not with each other
    for (int i = 0; i < num_objects && ok; ++i) {
      ok = false;
      for (int tries = 0; tries < 100; ++tries) {
        const int c = open[rng.next_below(static_cast<int64_t>(open.size()))];
        if (!object_used.insert(c).second) continue;
        GridObject obj;
        obj.x = c % spec.width;
        obj.y = c / spec.width;
        obj.reward =
            dist.reward_values[rng.next_below(static_cast<int64_t>(dist.reward_values.size()))];
        obj.respawn = rng.next_double() < dist.respawn_prob;
        spec.objects.push_back(obj);
        ok = true;
        break;
      }
    }
    if (!ok) continue;
    try {
      spec.validate();
    } catch (const std::invalid_argument&) {
      continue;
    }
    return spec;
  }
  throw std::runtime_error("sample_task: no valid layout after 200 attempts");
}

namespace {

GridSpec build_layout(int width, int height, const std::vector<std::string>& rows,
                      std::vector<int> starts, std::vector<GridObject> objects, double slip) {
  GridSpec spec;
  spec.width = width;
  spec.height = height;
  spec.gamma = 0.99;
  spec.slip_prob = slip;
  spec.wall.assign(static_cast<size_t>(width) * height, 0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) spec.wall[spec.cell(x, y)] = rows[y][x] == '#' ? 1 : 0;
  spec.start_cells = std::move(starts);
  spec.objects = std::move(objects);
  spec.validate();
  return spec;
}

}  // namespace

const std::vector<std::pair<std::string, GridSpec>>& held_out_configs() {
  static const std::vector<std::pair<std::string, GridSpec>> configs = [] {
    std::vector<std::pair<std::string, GridSpec>> out;
    out.emplace_back("open_room",
                     build_layout(6, 6,
                                  {"......", "......", "......", "......", "......", "......"},
                                  {0}, {{5, 5, 1.0, true}}, 0.05));
    out.emplace_back("four_rooms",
                     build_layout(7, 7,
                                  {".......", ".......", ".......", "#.###.#", ".......",
                                   ".......", "......."},
                                  {0}, {{6, 6, 1.0, true}, {6, 0, 0.5, false}}, 0.05));
    // Vertical divider with two doors, overlaid on the horizontal one above.
    {
      GridSpec& four = out.back().second;
      for (int y = 0; y < 7; ++y)
        if (y != 1 && y != 5) four.wall[four.cell(3, y)] = 1;
      four.validate();
    }
    out.emplace_back("long_corridor",
                     build_layout(9, 1, {"........."}, {0}, {{8, 0, 1.0, true}}, 0.0));
    out.emplace_back("maze",
                     build_layout(5, 5, {".....", "###.#", ".....", ".#.##", "....."},
                                  {0}, {{4, 4, 1.0, true}, {0, 2, 0.5, false}}, 0.05));
    out.emplace_back("ring",
                     build_layout(5, 5, {".....", ".###.", ".###.", ".###.", "....."},
                                  {0}, {{4, 4, 1.0, true}, {0, 4, 0.5, false}}, 0.1));
    return out;
  }();
  return configs;
}

}  // namespace pmdlab
