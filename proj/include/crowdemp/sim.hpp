#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "crowdemp/vec2.hpp"

namespace crowdemp::sim {

// What other agents can see of an agent.
struct ObservableState {
  Vec2 p;
  Vec2 v;
  double radius = 0.3;
};

// Full state of one agent (robot or human).
struct AgentState {
  Vec2 p;
  Vec2 v;
  double radius = 0.3;
  Vec2 goal;
  double v_ref = 1.0;
  double heading = 0.0;

  ObservableState observable() const { return {p, v, radius}; }
  double goal_distance() const { return norm(goal - p); }
  bool at_goal() const { return goal_distance() < radius; }

  friend bool operator==(const AgentState&, const AgentState&) = default;
};

// Commanded velocity. Each component must lie in [-1, 1].
struct Action {
  double vx = 0.0;
  double vy = 0.0;

  Vec2 velocity() const { return {vx, vy}; }
  friend bool operator==(const Action&, const Action&) = default;
};

inline constexpr double kActionBound = 1.0;

bool action_in_bounds(const Action& a);
// Throws ValidationError when a component is outside the action box or non-finite.
void validate_action(const Action& a);
Action clamp_to_box(Vec2 v);

struct WorldState {
  AgentState robot;
  std::vector<AgentState> humans;
  int t = 0;
  double dt = 0.25;

  std::size_t agent_count() const { return humans.size() + 1; }
  // Agent ids: 0 is the robot, 1..N are the humans.
  const AgentState& agent(int id) const { return id == 0 ? robot : humans[static_cast<std::size_t>(id - 1)]; }
  AgentState& agent(int id) { return id == 0 ? robot : humans[static_cast<std::size_t>(id - 1)]; }

  friend bool operator==(const WorldState&, const WorldState&) = default;
};

struct RewardParams {
  double collision = -20.0;
  double success = 20.0;
  double interaction = 0.0;
};

struct ScenarioConfig {
  int n_humans = 5;
  double circle_radius = 4.0;
  double dt = 0.25;
  double agent_radius = 0.3;
  double v_pref = 1.0;
  double v_max = 1.0;
  double jitter_deg = 10.0;
  double spawn_margin = 0.1;
  int max_placement_attempts = 100;
};

struct Collision {
  int a = 0;  // smaller agent id
  int b = 0;
  friend bool operator==(const Collision&, const Collision&) = default;
};

enum class Termination { kRunning, kSuccess, kCollision, kTimeout };
std::string to_string(Termination t);

// Holonomic step: position advances by the commanded velocity times dt.
AgentState step_agent(const AgentState& state, const Action& action, double dt);

// Robot reward for the current world. robot_collided must come from collision
// detection on the same world.
double compute_reward(const WorldState& world, bool robot_collided, const RewardParams& params);

WorldState spawn_circle_crossing(const ScenarioConfig& cfg, std::uint64_t seed);

// True for human k when its surface gap to any other agent (robot included)
// is below d_disc.
std::vector<bool> discomfort_flags(const WorldState& world, double d_disc);

// Every overlapping pair (center distance < summed radii), sorted.
std::vector<Collision> detect_collisions(const WorldState& world);

struct Observation {
  int agent_id = 0;
  AgentState self;
  std::vector<ObservableState> others;
  int t = 0;
  double dt = 0.25;
  std::uint64_t episode_seed = 0;
};

using Policy = std::function<Action(const Observation&)>;

struct EpisodeConfig {
  int max_steps = 100;
  // Whether humans perceive the robot. Off by default: humans react only to
  // each other, so the robot carries the whole avoidance burden.
  bool robot_visible = false;
  RewardParams reward;
  double discomfort_distance = 0.2;
  std::uint64_t seed = 0;
  // When false, robot collisions are penalized every step they persist but
  // the episode runs on.
  bool terminate_on_collision = true;
};

// Per-snapshot record of an episode. snapshots has one more entry than
// actions/rewards: actions[t] is applied to snapshots[t] to produce
// snapshots[t + 1], and rewards[t] is the robot reward on arrival there.
struct EpisodeTrace {
  std::uint64_t seed = 0;
  std::vector<WorldState> snapshots;
  std::vector<std::vector<Action>> actions;  // [step][agent id]
  std::vector<double> rewards;
  std::vector<std::vector<Collision>> collisions;  // [snapshot]
  std::vector<std::vector<bool>> discomfort;       // [snapshot][human]
  Termination termination = Termination::kRunning;

  int steps() const { return static_cast<int>(actions.size()); }
  std::size_t human_count() const { return snapshots.empty() ? 0 : snapshots.front().humans.size(); }
  // Snapshot index at which human h first satisfied at_goal(), or steps() + 1
  // if it never did. Snapshots before this index are the human's active steps.
  int human_arrival(std::size_t h) const;
  int collision_count() const;

  friend bool operator==(const EpisodeTrace&, const EpisodeTrace&) = default;
};

class Simulator {
 public:
  Simulator(WorldState initial, Policy human_policy, EpisodeConfig cfg);

  Observation observe(int agent_id) const;
  // Advances one tick with the given robot action; humans act on the
  // pre-step world. Throws ValidationError on invalid actions.
  void step(const Action& robot_action);

  bool done() const { return trace_.termination != Termination::kRunning; }
  const WorldState& world() const { return trace_.snapshots.back(); }
  const EpisodeTrace& trace() const { return trace_; }
  EpisodeTrace take_trace() && { return std::move(trace_); }

 private:
  Action checked_action(const Policy& policy, int agent_id) const;

  Policy human_policy_;
  EpisodeConfig cfg_;
  EpisodeTrace trace_;
};

EpisodeTrace run_episode(const WorldState& world, const Policy& robot_policy, const Policy& human_policy,
                         const EpisodeConfig& cfg);

// One row per agent per snapshot; see README for the column layout.
void write_trace_csv(std::ostream& out, const EpisodeTrace& trace);

}  // namespace crowdemp::sim
