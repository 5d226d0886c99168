#include "crowdemp/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crowdemp/error.hpp"
#include "crowdemp/rng.hpp"

namespace crowdemp::policy {

namespace {

constexpr double kEps = 1e-10;

// Internal line form: permitted side is to the left of `direction`.
struct Line {
  Vec2 point;
  Vec2 direction;
};

Line to_line(const HalfPlaneConstraint& c) { return {c.point, Vec2{c.normal.y, -c.normal.x}}; }
HalfPlaneConstraint to_constraint(const Line& l) { return {l.point, left_perp(l.direction)}; }

bool solve_on_line(std::span<const Line> lines, std::size_t line_no, double radius, Vec2 opt, bool direction_opt,
                   Vec2& result) {
  const Line& line = lines[line_no];
  const double dot_product = dot(line.point, line.direction);
  const double discriminant = dot_product * dot_product + radius * radius - abs_sq(line.point);
  if (discriminant < 0.0) return false;  // line misses the disc

  const double sqrt_disc = std::sqrt(discriminant);
  double t_left = -dot_product - sqrt_disc;
  double t_right = -dot_product + sqrt_disc;

  for (std::size_t i = 0; i < line_no; ++i) {
    const double denominator = det(line.direction, lines[i].direction);
    const double numerator = det(lines[i].direction, line.point - lines[i].point);
    if (std::abs(denominator) <= kEps) {
      if (numerator < 0.0) return false;  // parallel and infeasible
      continue;
    }
    const double t = numerator / denominator;
    if (denominator >= 0.0)
      t_right = std::min(t_right, t);
    else
      t_left = std::max(t_left, t);
    if (t_left > t_right) return false;
  }

  if (direction_opt) {
    result = dot(opt, line.direction) > 0.0 ? line.point + t_right * line.direction
                                            : line.point + t_left * line.direction;
  } else {
    const double t = dot(line.direction, opt - line.point);
    result = line.point + std::clamp(t, t_left, t_right) * line.direction;
  }
  return true;
}

// Returns the index of the first line that could not be satisfied, or
// lines.size() on success.
std::size_t solve_2d(std::span<const Line> lines, double radius, Vec2 opt, bool direction_opt, Vec2& result) {
  if (direction_opt)
    result = opt * radius;
  else if (abs_sq(opt) > radius * radius)
    result = normalized(opt) * radius;
  else
    result = opt;

  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (det(lines[i].direction, lines[i].point - result) > 0.0) {
      const Vec2 previous = result;
      if (!solve_on_line(lines, i, radius, opt, direction_opt, result)) {
        result = previous;
        return i;
      }
    }
  }
  return lines.size();
}

// Minimizes the maximum violation over the lines from `begin` on, treating the
// problem as a 3-D LP projected onto each violated line in turn.
void solve_min_violation(std::span<const Line> lines, std::size_t begin, double radius, Vec2& result) {
  double distance = 0.0;
  for (std::size_t i = begin; i < lines.size(); ++i) {
    if (det(lines[i].direction, lines[i].point - result) <= distance) continue;

    std::vector<Line> projected;
    projected.reserve(i);
    for (std::size_t j = 0; j < i; ++j) {
      Line l;
      const double determinant = det(lines[i].direction, lines[j].direction);
      if (std::abs(determinant) <= kEps) {
        if (dot(lines[i].direction, lines[j].direction) > 0.0) continue;  // same direction
        l.point = 0.5 * (lines[i].point + lines[j].point);
      } else {
        l.point = lines[i].point +
                  (det(lines[j].direction, lines[i].point - lines[j].point) / determinant) * lines[i].direction;
      }
      l.direction = normalized(lines[j].direction - lines[i].direction);
      projected.push_back(l);
    }

    const Vec2 previous = result;
    if (solve_2d(projected, radius, left_perp(lines[i].direction), true, result) < projected.size())
      result = previous;  // numerical corner; keep the best so far
    distance = det(lines[i].direction, lines[i].point - result);
  }
}

}  // namespace

sim::Action linear_policy(const sim::AgentState& self) {
  if (self.at_goal()) return {0.0, 0.0};
  const Vec2 to_goal = self.goal - self.p;
  return sim::clamp_to_box(self.v_ref * normalized(to_goal));
}

std::vector<sim::ObservableState> nearest_neighbors(const sim::AgentState& self,
                                                    std::span<const sim::ObservableState> others, int count,
                                                    double range) {
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = 0; i < others.size(); ++i) {
    const double d = norm(others[i].p - self.p);
    if (d <= range) order.emplace_back(d, i);
  }
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  if (static_cast<int>(order.size()) > count) order.resize(static_cast<std::size_t>(std::max(count, 0)));
  std::vector<sim::ObservableState> out;
  out.reserve(order.size());
  for (const auto& [d, i] : order) out.push_back(others[i]);
  return out;
}

std::vector<HalfPlaneConstraint> orca_constraints(const sim::AgentState& self,
                                                  std::span<const sim::ObservableState> neighbors,
                                                  const OrcaConfig& cfg, double dt) {
  if (!(dt > 0.0)) throw ValidationError("orca_constraints: dt must be positive");
  if (!(cfg.time_horizon > dt)) throw ValidationError("orca time_horizon must exceed dt");
  if (cfg.safety_space < 0.0) throw ValidationError("orca safety_space must be non-negative");

  const double inv_horizon = 1.0 / cfg.time_horizon;
  std::vector<HalfPlaneConstraint> out;
  out.reserve(neighbors.size());
  for (const auto& other : neighbors) {
    const Vec2 rel_pos = other.p - self.p;
    const Vec2 rel_vel = self.v - other.v;
    const double dist_sq = abs_sq(rel_pos);
    if (dist_sq == 0.0) throw DegenerateGeometry("orca_constraints: neighbor center coincides with agent");
    const double combined_radius = self.radius + other.radius + cfg.safety_space;
    const double combined_radius_sq = combined_radius * combined_radius;

    Line line;
    Vec2 u;
    if (dist_sq > combined_radius_sq) {
      // Truncated velocity obstacle: cut-off disc or one of the two legs.
      const Vec2 w = rel_vel - inv_horizon * rel_pos;
      const double w_length_sq = abs_sq(w);
      const double dot1 = dot(w, rel_pos);
      if (dot1 < 0.0 && dot1 * dot1 > combined_radius_sq * w_length_sq) {
        const double w_length = std::sqrt(w_length_sq);
        const Vec2 unit_w = w / w_length;
        line.direction = {unit_w.y, -unit_w.x};
        u = (combined_radius * inv_horizon - w_length) * unit_w;
      } else {
        const double leg = std::sqrt(dist_sq - combined_radius_sq);
        if (det(rel_pos, w) > 0.0) {
          line.direction = Vec2{rel_pos.x * leg - rel_pos.y * combined_radius,
                                rel_pos.x * combined_radius + rel_pos.y * leg} / dist_sq;
        } else {
          line.direction = -Vec2{rel_pos.x * leg + rel_pos.y * combined_radius,
                                 -rel_pos.x * combined_radius + rel_pos.y * leg} / dist_sq;
        }
        u = dot(rel_vel, line.direction) * line.direction - rel_vel;
      }
    } else {
      // Already overlapping: escape within one step.
      const double inv_dt = 1.0 / dt;
      const Vec2 w = rel_vel - inv_dt * rel_pos;
      const double w_length = norm(w);
      const Vec2 unit_w = w / w_length;
      line.direction = {unit_w.y, -unit_w.x};
      u = (combined_radius * inv_dt - w_length) * unit_w;
    }
    line.point = self.v + 0.5 * u;
    out.push_back(to_constraint(line));
  }
  return out;
}

Vec2 solve_velocity_program(std::span<const HalfPlaneConstraint> constraints, Vec2 v_pref, double v_max,
                            std::optional<std::uint64_t> shuffle_seed) {
  if (!(v_max > 0.0)) throw ValidationError("solve_velocity_program: v_max must be positive");
  std::vector<Line> lines;
  lines.reserve(constraints.size());
  for (const auto& c : constraints) lines.push_back(to_line(c));
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    for (std::size_t i = lines.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(lines[i - 1], lines[j]);
    }
  }
  Vec2 result;
  const std::size_t failed = solve_2d(lines, v_max, v_pref, false, result);
  if (failed < lines.size()) solve_min_violation(lines, failed, v_max, result);
  return result;
}

sim::Action orca_policy(const sim::Observation& obs, const OrcaConfig& cfg) {
  const sim::AgentState& self = obs.self;
  Vec2 v_pref = linear_policy(self).velocity();
  if (cfg.symmetry_bias != 0.0 && abs_sq(v_pref) > 0.0) v_pref += cfg.symmetry_bias * left_perp(normalized(v_pref));

  const auto neighbors = nearest_neighbors(self, obs.others, cfg.neighbor_count, cfg.neighbor_range);
  const auto constraints = orca_constraints(self, neighbors, cfg, obs.dt);
  std::optional<std::uint64_t> seed;
  if (cfg.shuffle_constraints)
    seed = derive_seed(obs.episode_seed, {0x0cca, static_cast<std::uint64_t>(obs.t), static_cast<std::uint64_t>(obs.agent_id)});
  return sim::clamp_to_box(solve_velocity_program(constraints, v_pref, cfg.v_max, seed));
}

sim::Policy make_linear_policy() {
  return [](const sim::Observation& obs) { return linear_policy(obs.self); };
}

sim::Policy make_orca_policy(OrcaConfig cfg) {
  return [cfg](const sim::Observation& obs) { return orca_policy(obs, cfg); };
}

sim::Policy make_noisy_orca_policy(OrcaConfig cfg, double sigma) {
  return [cfg, sigma](const sim::Observation& obs) {
    const sim::Action base = orca_policy(obs, cfg);
    Rng rng(derive_seed(obs.episode_seed, {0x501e, static_cast<std::uint64_t>(obs.t),
                                           static_cast<std::uint64_t>(obs.agent_id)}));
    const double nx = sigma * standard_normal(rng);
    const double ny = sigma * standard_normal(rng);
    return sim::clamp_to_box({base.vx + nx, base.vy + ny});
  };
}

}  // namespace crowdemp::policy
