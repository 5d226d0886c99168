#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "crowdemp/sim.hpp"

namespace crowdemp::occupancy {

struct GridSpec {
  int rows = 4;  // along y
  int cols = 4;  // along x
  double cell_size = 1.0;

  std::size_t cell_count() const { return static_cast<std::size_t>(rows * cols); }
};

void validate(const GridSpec& spec);

struct Cell {
  double occupancy = 0.0;
  double vx = 0.0;
  double vy = 0.0;
};

// World-axis-aligned grid centered on one agent. Row 0 is the most negative
// y band, column 0 the most negative x band.
class OccupancyMap {
 public:
  explicit OccupancyMap(GridSpec spec) : spec_(spec), cells_(spec.cell_count()) {}

  const GridSpec& spec() const { return spec_; }
  const Cell& at(int row, int col) const { return cells_[index(row, col)]; }
  Cell& at(int row, int col) { return cells_[index(row, col)]; }
  const std::vector<Cell>& cells() const { return cells_; }
  int occupied_count() const;

  // Row-major cells, each contributing [occupancy, v_x, v_y].
  void append_to(Eigen::VectorXd& out, Eigen::Index offset) const;

 private:
  std::size_t index(int row, int col) const { return static_cast<std::size_t>(row * spec_.cols + col); }

  GridSpec spec_;
  std::vector<Cell> cells_;
};

// A cell is occupied when another agent's center lies in it; the nearest such
// agent to the map center supplies the cell velocity.
OccupancyMap build_ego_map(Vec2 center, std::span<const sim::ObservableState> others, const GridSpec& spec);

int state_size(const GridSpec& spec, int k);

// Ego map of `subject` followed by the maps of its k-1 nearest humans
// (distance, then index), zero-padded to k maps. The robot is an occupant in
// every map.
Eigen::VectorXd assemble_state(std::size_t subject, const sim::WorldState& world, const GridSpec& spec, int k);

void write_map_csv_header(std::ostream& out);
void write_map_csv(std::ostream& out, int subject_id, int t, const OccupancyMap& map);

}  // namespace crowdemp::occupancy
