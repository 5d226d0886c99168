#include "crowdemp/occupancy.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>

#include "crowdemp/error.hpp"

namespace crowdemp::occupancy {

void validate(const GridSpec& spec) {
  if (spec.rows < 1 || spec.cols < 1) throw ValidationError("grid rows and cols must be at least 1");
  if (!(spec.cell_size > 0.0)) throw ValidationError("grid cell_size must be positive");
}

int OccupancyMap::occupied_count() const {
  return static_cast<int>(std::count_if(cells_.begin(), cells_.end(), [](const Cell& c) { return c.occupancy > 0.0; }));
}

void OccupancyMap::append_to(Eigen::VectorXd& out, Eigen::Index offset) const {
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    const Eigen::Index base = offset + static_cast<Eigen::Index>(3 * i);
    out[base] = cells_[i].occupancy;
    out[base + 1] = cells_[i].vx;
    out[base + 2] = cells_[i].vy;
  }
}

OccupancyMap build_ego_map(Vec2 center, std::span<const sim::ObservableState> others, const GridSpec& spec) {
  validate(spec);
  OccupancyMap map(spec);
  std::vector<double> best(spec.cell_count(), std::numeric_limits<double>::infinity());
  const double half_w = 0.5 * spec.cols * spec.cell_size;
  const double half_h = 0.5 * spec.rows * spec.cell_size;
  for (const auto& o : others) {
    const Vec2 rel = o.p - center;
    const double cx = std::floor((rel.x + half_w) / spec.cell_size);
    const double cy = std::floor((rel.y + half_h) / spec.cell_size);
    if (cx < 0.0 || cy < 0.0 || cx >= spec.cols || cy >= spec.rows) continue;
    const int col = static_cast<int>(cx);
    const int row = static_cast<int>(cy);
    const double d = norm(rel);
    const std::size_t idx = static_cast<std::size_t>(row * spec.cols + col);
    if (d < best[idx]) {
      best[idx] = d;
      map.at(row, col) = {1.0, o.v.x, o.v.y};
    }
  }
  return map;
}

int state_size(const GridSpec& spec, int k) { return k * static_cast<int>(spec.cell_count()) * 3; }

Eigen::VectorXd assemble_state(std::size_t subject, const sim::WorldState& world, const GridSpec& spec, int k) {
  if (subject >= world.humans.size()) throw ValidationError("assemble_state: subject index out of range");
  if (k < 1) throw ValidationError("assemble_state: k must be at least 1");

  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t h = 0; h < world.humans.size(); ++h)
    if (h != subject) order.emplace_back(norm(world.humans[h].p - world.humans[subject].p), h);
  std::sort(order.begin(), order.end());

  std::vector<std::size_t> centers{subject};
  for (const auto& [d, h] : order) {
    if (static_cast<int>(centers.size()) >= k) break;
    centers.push_back(h);
  }

  Eigen::VectorXd z = Eigen::VectorXd::Zero(state_size(spec, k));
  std::vector<sim::ObservableState> others;
  others.reserve(world.humans.size());
  const Eigen::Index map_len = static_cast<Eigen::Index>(spec.cell_count() * 3);
  for (std::size_t m = 0; m < centers.size(); ++m) {
    const std::size_t c = centers[m];
    others.clear();
    others.push_back(world.robot.observable());
    for (std::size_t h = 0; h < world.humans.size(); ++h)
      if (h != c) others.push_back(world.humans[h].observable());
    build_ego_map(world.humans[c].p, others, spec).append_to(z, static_cast<Eigen::Index>(m) * map_len);
  }
  return z;
}

void write_map_csv_header(std::ostream& out) { out << "subject_id,t,cell_row,cell_col,occupancy,v_x,v_y\n"; }

void write_map_csv(std::ostream& out, int subject_id, int t, const OccupancyMap& map) {
  const auto prec = out.precision();
  out << std::setprecision(9);
  for (int r = 0; r < map.spec().rows; ++r)
    for (int c = 0; c < map.spec().cols; ++c) {
      const Cell& cell = map.at(r, c);
      out << subject_id << ',' << t << ',' << r << ',' << c << ',' << cell.occupancy << ',' << cell.vx << ','
          << cell.vy << '\n';
    }
  out.precision(prec);
}

}  // namespace crowdemp::occupancy
