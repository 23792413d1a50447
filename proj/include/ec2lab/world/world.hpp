#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ec2lab/numerics/array.hpp"
#include "ec2lab/numerics/rng.hpp"

namespace ec2lab::world {

inline constexpr size_t kStateDim = 8;
inline constexpr size_t kActionDim = 3;
inline constexpr size_t kMaxStates = 64;  // actions per episode <= 63
inline constexpr size_t kVideoDim = 3 * kStateDim;

inline constexpr double kStepSize = 0.1;
inline constexpr double kDrawerReach = 0.15;
inline constexpr double kButtonReach = 0.1;
inline constexpr double kBlockReach = 0.1;
inline constexpr double kGripEngage = 0.5;

// Fixed layout (invented tabletop): drawer handles are stationary interaction
// points, the open fraction is an internal degree of freedom.
inline constexpr double kButtonX = 0.5, kButtonY = -0.5;
inline constexpr double kLeftHandleX = -0.55, kRightHandleX = 0.55;
inline constexpr double kHandleY = 0.45;
inline constexpr double kBlockBaseX = 0.0, kBlockBaseY = -0.5;
inline constexpr double kPushGoalX = -0.5, kPushGoalY = -0.5;

// 8-dim world state; serialization order is the field order below:
// [agent_x, agent_y, gripper, drawer_left_open, drawer_right_open,
//  button_pressed, block_x, block_y]
struct WorldState {
  double agent_x = 0, agent_y = 0;
  double gripper = 0;                      // [0, 1]
  double drawer_left_open = 0;             // [0, 1]
  double drawer_right_open = 0;            // [0, 1]
  double button_pressed = 0;               // {0, 1}, latched
  double block_x = 0, block_y = 0;

  std::array<double, kStateDim> vec() const {
    return {agent_x, agent_y, gripper, drawer_left_open, drawer_right_open,
            button_pressed, block_x, block_y};
  }
  static WorldState from_vec(const std::array<double, kStateDim>& v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
  }
};

// 3-dim action; components clamped to [-1, 1] on construction and scaled by
// kStepSize when applied.
struct Action {
  double dx = 0, dy = 0, dgrip = 0;
  Action() = default;
  Action(double dx_, double dy_, double dgrip_);
  std::array<double, kActionDim> vec() const { return {dx, dy, dgrip}; }
};

enum class Verb { Reach, Push, Press, Open, Close, Pick };
enum class Obj { Block, Button, LeftDrawer, RightDrawer };

std::string verb_word(Verb v);
std::string obj_phrase(Obj o);

// One of the 10 valid (verb, object) combinations. goal_xy is only meaningful
// for push (sampled at reset).
struct TaskSpec {
  Verb verb;
  Obj object;
  double goal_x = kPushGoalX, goal_y = kPushGoalY;

  std::string id() const;  // e.g. "open_left_drawer"
  static const std::vector<TaskSpec>& all();  // the canonical 10
  static TaskSpec by_index(size_t i);
  static TaskSpec by_id(const std::string& id);
  static size_t index_of(const std::string& id);
};

struct Episode {
  TaskSpec task;
  uint64_t seed = 0;
  std::string instruction;       // stored paraphrase
  std::string instruction_alt;   // second paraphrase, reserved for eval
  std::vector<WorldState> states;
  std::vector<Action> actions;
  num::Array frame_features;     // {L, 8}; state vectors, plus noise if any
  num::Array video_feature;      // {24} = concat(first, mean, last) frame
  size_t length() const { return states.size(); }
};

// Deterministic dynamics. Interactions are gated on the pre-move agent
// position and the post-update gripper; drawer motion uses the signed
// action-axis dot product so both opening and closing are reachable.
WorldState step(const WorldState& s, const Action& a);

bool goal_success(const WorldState& s, const TaskSpec& task);

// Pure waypoint controller; zero action once the goal predicate holds.
Action scripted_expert(const WorldState& s, const TaskSpec& task);

// Randomized reset: agent/block jittered +-0.2, gripper in [0, 0.2], drawers
// near closed except the target drawer of a close task (in [0.8, 1.0]),
// push goal jittered +-0.1.
WorldState reset_state(TaskSpec& task, num::Rng& rng);

// Templated instruction, lowercase, single spaces; the canonical verb and
// object words appear in every surface form.
std::string instruction_text(const TaskSpec& task, num::Rng& rng);

// Stored paraphrase plus a distinct one reserved for eval, from one stream.
std::pair<std::string, std::string> instruction_pair(const TaskSpec& task,
                                                     num::Rng& rng);
// All surface forms a task can produce.
std::vector<std::string> instruction_surface_forms(const TaskSpec& task);

// Frame features for one episode: row t is states[t] (+ N(0, noise_std) when
// noise_std > 0, drawn from rng in row-major order).
num::Array frame_features_of(const std::vector<WorldState>& states,
                             double noise_std, num::Rng& rng);
num::Array video_feature_of(const num::Array& frames);

// Expert rollout from a seeded reset; throws on expert failure (naming the
// seed) since expert episodes are success-guaranteed by contract.
Episode generate_episode(const TaskSpec& base_task, uint64_t seed,
                         double noise_std = 0.0);

// Balanced corpus: task i%10, per-episode seeds split from corpus_seed.
std::vector<Episode> generate_corpus(uint64_t corpus_seed, size_t n,
                                     double noise_std = 0.0);

// JSONL dataset: one record per line, fields in order
// {task_id, seed, instruction, states, actions, video_feature}.
void write_jsonl(const std::string& path, const std::vector<Episode>& episodes);
std::vector<Episode> read_jsonl(const std::string& path, double noise_std = 0.0);

}  // namespace ec2lab::world
