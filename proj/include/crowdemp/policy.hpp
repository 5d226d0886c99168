#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "crowdemp/sim.hpp"
#include "crowdemp/vec2.hpp"

namespace crowdemp::policy {

// Permitted velocities v satisfy dot(v - point, normal) >= 0.
struct HalfPlaneConstraint {
  Vec2 point;
  Vec2 normal;

  double signed_distance(Vec2 v) const { return dot(v - point, normal); }
  bool permits(Vec2 v, double tol = 0.0) const { return signed_distance(v) >= -tol; }
};

struct OrcaConfig {
  double time_horizon = 5.0;
  double safety_space = 0.0;
  double v_max = 1.0;
  int neighbor_count = 5;
  double neighbor_range = 10.0;
  // Leftward nudge on the preferred velocity that breaks exact head-on symmetry.
  double symmetry_bias = 1e-6;
  // Seeded permutation of the constraint order before solving.
  bool shuffle_constraints = true;
};

sim::Action linear_policy(const sim::AgentState& self);

// Nearest `count` neighbors within `range`, ordered by distance (stable on ties).
std::vector<sim::ObservableState> nearest_neighbors(const sim::AgentState& self,
                                                    std::span<const sim::ObservableState> others, int count,
                                                    double range);

// One reciprocal half-plane per neighbor. Throws DegenerateGeometry when a
// neighbor's center coincides with self.
std::vector<HalfPlaneConstraint> orca_constraints(const sim::AgentState& self,
                                                  std::span<const sim::ObservableState> neighbors,
                                                  const OrcaConfig& cfg, double dt);

// Closest velocity to v_pref inside the disc |v| <= v_max that satisfies every
// constraint. When no such velocity exists, returns the velocity in the disc
// that minimizes the largest constraint violation.
Vec2 solve_velocity_program(std::span<const HalfPlaneConstraint> constraints, Vec2 v_pref, double v_max,
                            std::optional<std::uint64_t> shuffle_seed = std::nullopt);

sim::Action orca_policy(const sim::Observation& obs, const OrcaConfig& cfg);

sim::Policy make_linear_policy();
sim::Policy make_orca_policy(OrcaConfig cfg);
// ORCA with Gaussian velocity noise (std `sigma` per component), seeded from
// the observation's episode seed, time step and agent id.
sim::Policy make_noisy_orca_policy(OrcaConfig cfg, double sigma);

}  // namespace crowdemp::policy
