#include "ec2lab/world/world.hpp"

#include <cmath>
#include <stdexcept>

namespace ec2lab::world {

static double clampd(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

Action::Action(double dx_, double dy_, double dgrip_)
    : dx(clampd(dx_, -1, 1)), dy(clampd(dy_, -1, 1)), dgrip(clampd(dgrip_, -1, 1)) {}

std::string verb_word(Verb v) {
  switch (v) {
    case Verb::Reach: return "reach";
    case Verb::Push: return "push";
    case Verb::Press: return "press";
    case Verb::Open: return "open";
    case Verb::Close: return "close";
    case Verb::Pick: return "pick";
  }
  throw std::invalid_argument("verb_word: bad verb");
}

std::string obj_phrase(Obj o) {
  switch (o) {
    case Obj::Block: return "block";
    case Obj::Button: return "button";
    case Obj::LeftDrawer: return "left drawer";
    case Obj::RightDrawer: return "right drawer";
  }
  throw std::invalid_argument("obj_phrase: bad object");
}

std::string TaskSpec::id() const {
  std::string o;
  switch (object) {
    case Obj::Block: o = "block"; break;
    case Obj::Button: o = "button"; break;
    case Obj::LeftDrawer: o = "left_drawer"; break;
    case Obj::RightDrawer: o = "right_drawer"; break;
  }
  return verb_word(verb) + "_" + o;
}

const std::vector<TaskSpec>& TaskSpec::all() {
  static const std::vector<TaskSpec> tasks = {
      {Verb::Reach, Obj::Button},      {Verb::Reach, Obj::LeftDrawer},
      {Verb::Reach, Obj::RightDrawer}, {Verb::Press, Obj::Button},
      {Verb::Pick, Obj::Block},        {Verb::Push, Obj::Block},
      {Verb::Open, Obj::LeftDrawer},   {Verb::Open, Obj::RightDrawer},
      {Verb::Close, Obj::LeftDrawer},  {Verb::Close, Obj::RightDrawer},
  };
  return tasks;
}

TaskSpec TaskSpec::by_index(size_t i) {
  if (i >= all().size()) throw std::invalid_argument("TaskSpec: index out of range");
  return all()[i];
}

TaskSpec TaskSpec::by_id(const std::string& id) {
  return all()[index_of(id)];
}

size_t TaskSpec::index_of(const std::string& id) {
  const auto& tasks = all();
  for (size_t i = 0; i < tasks.size(); ++i)
    if (tasks[i].id() == id) return i;
  throw std::invalid_argument("TaskSpec: unknown task id " + id);
}

static double dist2d(double ax, double ay, double bx, double by) {
  return std::hypot(ax - bx, ay - by);
}

static void handle_pos(Obj o, double& hx, double& hy) {
  hx = (o == Obj::LeftDrawer) ? kLeftHandleX : kRightHandleX;
  hy = kHandleY;
}

// Drawer pull axis: moving along it opens the drawer. Left drawer opens to
// the right, right drawer opens to the left.
static double drawer_axis_x(Obj o) { return o == Obj::LeftDrawer ? 1.0 : -1.0; }

WorldState step(const WorldState& s, const Action& a_raw) {
  Action a(a_raw.dx, a_raw.dy, a_raw.dgrip);  // clamp defensively
  WorldState n = s;
  n.gripper = clampd(s.gripper + kStepSize * a.dgrip, 0, 1);
  n.agent_x = clampd(s.agent_x + kStepSize * a.dx, -1, 1);
  n.agent_y = clampd(s.agent_y + kStepSize * a.dy, -1, 1);
  bool grip = n.gripper > kGripEngage;
  if (grip) {
    for (Obj d : {Obj::LeftDrawer, Obj::RightDrawer}) {
      double hx, hy;
      handle_pos(d, hx, hy);
      if (dist2d(s.agent_x, s.agent_y, hx, hy) <= kDrawerReach) {
        double delta = kStepSize * (a.dx * drawer_axis_x(d));
        if (d == Obj::LeftDrawer)
          n.drawer_left_open = clampd(s.drawer_left_open + delta, 0, 1);
        else
          n.drawer_right_open = clampd(s.drawer_right_open + delta, 0, 1);
      }
    }
    if (dist2d(s.agent_x, s.agent_y, kButtonX, kButtonY) <= kButtonReach)
      n.button_pressed = 1.0;  // latched
    if (dist2d(s.agent_x, s.agent_y, s.block_x, s.block_y) <= kBlockReach) {
      n.block_x = clampd(s.block_x + (n.agent_x - s.agent_x), -1, 1);
      n.block_y = clampd(s.block_y + (n.agent_y - s.agent_y), -1, 1);
    }
  }
  return n;
}

static void target_pos(const WorldState& s, const TaskSpec& t, double& tx,
                       double& ty) {
  switch (t.object) {
    case Obj::Button: tx = kButtonX; ty = kButtonY; return;
    case Obj::Block: tx = s.block_x; ty = s.block_y; return;
    case Obj::LeftDrawer:
    case Obj::RightDrawer: handle_pos(t.object, tx, ty); return;
  }
  throw std::invalid_argument("target_pos: bad object");
}

bool goal_success(const WorldState& s, const TaskSpec& t) {
  double tx, ty;
  switch (t.verb) {
    case Verb::Reach:
      target_pos(s, t, tx, ty);
      return dist2d(s.agent_x, s.agent_y, tx, ty) <= 0.1;
    case Verb::Press:
      return s.button_pressed >= 0.5;
    case Verb::Pick:
      return dist2d(s.agent_x, s.agent_y, s.block_x, s.block_y) <= 0.06 &&
             s.gripper >= 0.7;
    case Verb::Push:
      return dist2d(s.block_x, s.block_y, t.goal_x, t.goal_y) <= 0.1;
    case Verb::Open:
      return (t.object == Obj::LeftDrawer ? s.drawer_left_open
                                          : s.drawer_right_open) >= 0.9;
    case Verb::Close:
      return (t.object == Obj::LeftDrawer ? s.drawer_left_open
                                          : s.drawer_right_open) <= 0.1;
  }
  throw std::invalid_argument("goal_success: bad verb");
}

// Move toward (tx, ty), stopping stop short of it; partial final step.
static Action approach(const WorldState& s, double tx, double ty, double stop,
                       double dgrip) {
  double dx = tx - s.agent_x, dy = ty - s.agent_y;
  double d = std::hypot(dx, dy);
  if (d <= stop) return Action(0, 0, dgrip);
  double step = std::min(1.0, (d - stop * 0.5) / kStepSize);
  return Action(dx / d * step, dy / d * step, dgrip);
}

// Drawer gait: stand on the handle line, pull along the axis while inside the
// interaction zone, then loop around above the zone to re-enter from the
// start side. Pure function of the current pose.
static Action drawer_gait(const WorldState& s, const TaskSpec& t) {
  double hx, hy;
  handle_pos(t.object, hx, hy);
  // Pull direction: +axis opens, -axis closes.
  double pull = drawer_axis_x(t.object) * (t.verb == Verb::Open ? 1.0 : -1.0);
  double relx = s.agent_x - hx, rely = s.agent_y - hy;
  double u = relx * pull;  // pull-aligned coordinate; pulls increase u
  if (s.gripper <= 0.55) {
    double px = hx - 0.144 * pull;
    if (dist2d(s.agent_x, s.agent_y, px, hy) > 0.02)
      return approach(s, px, hy, 0.015, -1);
    return Action(0, 0, 1);  // at station: squeeze
  }
  if (std::abs(rely) < 0.05) {
    // On the pull line. Pulling from behind the zone is harmless (no effect
    // until the agent enters it), so only the forward end is gated.
    if (u <= 0.145) return Action(pull, 0, 1);
    return Action(0, 1, 1);  // leave the line upward
  }
  if (rely <= -0.05) return Action(0, 1, 1);  // below the line: climb back
  if (rely >= 0.145) {
    // Above the zone (approach lands within 0.02 of the line, so this leg
    // always sits at rely >= 0.18 > zone radius): walk back, then descend.
    if (u > -0.125) return Action(-pull, 0, 1);
    return Action(0, -1, 1);
  }
  // Mid-altitude: finish the vertical leg this position implies.
  if (u <= -0.125) return Action(0, -1, 1);
  return Action(0, 1, 1);
}

Action scripted_expert(const WorldState& s, const TaskSpec& t) {
  if (goal_success(s, t)) return Action(0, 0, 0);
  double tx, ty;
  switch (t.verb) {
    case Verb::Reach:
      target_pos(s, t, tx, ty);
      return approach(s, tx, ty, 0.05, 0);
    case Verb::Press: {
      double d = dist2d(s.agent_x, s.agent_y, kButtonX, kButtonY);
      if (d > 0.06) return approach(s, kButtonX, kButtonY, 0.045, -1);
      return Action(0, 0, 1);
    }
    case Verb::Pick: {
      double d = dist2d(s.agent_x, s.agent_y, s.block_x, s.block_y);
      if (d > 0.035 && s.gripper <= kGripEngage)
        return approach(s, s.block_x, s.block_y, 0.02, -1);
      return Action(0, 0, 1);
    }
    case Verb::Push: {
      double d = dist2d(s.agent_x, s.agent_y, s.block_x, s.block_y);
      if (s.gripper <= kGripEngage) {
        if (d > 0.035) return approach(s, s.block_x, s.block_y, 0.02, -1);
        return Action(0, 0, 1);
      }
      // Engaged: drag the block toward the goal.
      double gx = t.goal_x - s.block_x, gy = t.goal_y - s.block_y;
      double gd = std::hypot(gx, gy);
      double stepl = std::min(1.0, (gd - 0.05) / kStepSize);
      return Action(gx / gd * stepl, gy / gd * stepl, 1);
    }
    case Verb::Open:
    case Verb::Close:
      return drawer_gait(s, t);
  }
  throw std::invalid_argument("scripted_expert: bad verb");
}

WorldState reset_state(TaskSpec& task, num::Rng& rng) {
  WorldState s;
  s.agent_x = 0.0 + rng.uniform(-0.2, 0.2);
  s.agent_y = 0.1 + rng.uniform(-0.2, 0.2);
  s.gripper = rng.uniform(0.0, 0.2);
  double dl = rng.uniform(0.0, 1.0), dr = rng.uniform(0.0, 1.0);
  s.drawer_left_open = dl * 0.1;
  s.drawer_right_open = dr * 0.1;
  if (task.verb == Verb::Close) {
    if (task.object == Obj::LeftDrawer) s.drawer_left_open = 0.8 + dl * 0.2;
    else s.drawer_right_open = 0.8 + dr * 0.2;
  }
  s.button_pressed = 0.0;
  s.block_x = kBlockBaseX + rng.uniform(-0.2, 0.2);
  s.block_y = kBlockBaseY + rng.uniform(-0.2, 0.2);
  // Push goal drawn unconditionally to keep the stream aligned across tasks.
  double gx = rng.uniform(-0.1, 0.1), gy = rng.uniform(-0.1, 0.1);
  if (task.verb == Verb::Push) {
    task.goal_x = kPushGoalX + gx;
    task.goal_y = kPushGoalY + gy;
  }
  return s;
}

static const std::vector<std::string>& verb_templates(Verb v) {
  // "%" marks the object slot; the canonical verb word appears in every form.
  static const std::vector<std::string> reach = {
      "reach the %", "reach toward the %", "move to reach the %"};
  static const std::vector<std::string> push = {
      "push the %", "push the % forward", "go push the %"};
  static const std::vector<std::string> press = {
      "press the %", "press down on the %", "go press the %"};
  static const std::vector<std::string> open = {
      "open the %", "pull open the %", "slide the % open"};
  static const std::vector<std::string> close = {
      "close the %", "close up the %", "go close the %"};
  static const std::vector<std::string> pick = {
      "pick up the %", "pick the % up", "go pick up the %"};
  switch (v) {
    case Verb::Reach: return reach;
    case Verb::Push: return push;
    case Verb::Press: return press;
    case Verb::Open: return open;
    case Verb::Close: return close;
    case Verb::Pick: return pick;
  }
  throw std::invalid_argument("verb_templates: bad verb");
}

static std::string fill_template(const std::string& tpl, const std::string& obj) {
  std::string out;
  for (char c : tpl) {
    if (c == '%') out += obj;
    else out += c;
  }
  return out;
}

std::vector<std::string> instruction_surface_forms(const TaskSpec& task) {
  std::vector<std::string> out;
  for (const std::string& tpl : verb_templates(task.verb))
    out.push_back(fill_template(tpl, obj_phrase(task.object)));
  return out;
}

std::string instruction_text(const TaskSpec& task, num::Rng& rng) {
  const auto& tpls = verb_templates(task.verb);
  size_t pick = static_cast<size_t>(rng.uniform_int(static_cast<int>(tpls.size())));
  return fill_template(tpls[pick], obj_phrase(task.object));
}

std::pair<std::string, std::string> instruction_pair(const TaskSpec& task,
                                                     num::Rng& rng) {
  std::string first = instruction_text(task, rng);
  std::string second = first;
  for (int tries = 0; second == first && tries < 64; ++tries)
    second = instruction_text(task, rng);
  return {first, second};
}

num::Array frame_features_of(const std::vector<WorldState>& states,
                             double noise_std, num::Rng& rng) {
  num::Array f = num::Array::zeros({states.size(), kStateDim});
  for (size_t t = 0; t < states.size(); ++t) {
    auto v = states[t].vec();
    for (size_t j = 0; j < kStateDim; ++j) {
      double x = v[j];
      if (noise_std > 0.0) x += noise_std * rng.normal();
      f.at(t, j) = x;
    }
  }
  return f;
}

num::Array video_feature_of(const num::Array& frames) {
  size_t L = frames.rows();
  if (L == 0 || frames.cols() != kStateDim)
    throw std::invalid_argument("video_feature_of: bad frame matrix " +
                                frames.shape_str());
  num::Array out = num::Array::zeros({kVideoDim});
  for (size_t j = 0; j < kStateDim; ++j) {
    out.data[j] = frames.at(0, j);
    double m = 0.0;
    for (size_t t = 0; t < L; ++t) m += frames.at(t, j);
    out.data[kStateDim + j] = m / static_cast<double>(L);
    out.data[2 * kStateDim + j] = frames.at(L - 1, j);
  }
  return out;
}

Episode generate_episode(const TaskSpec& base_task, uint64_t seed,
                         double noise_std) {
  num::Rng root(seed);
  num::Rng reset_rng = root.split("reset");
  num::Rng instr_rng = root.split("instr");
  num::Rng noise_rng = root.split("noise");

  Episode ep;
  ep.task = base_task;
  ep.seed = seed;
  WorldState s = reset_state(ep.task, reset_rng);
  ep.states.push_back(s);
  while (!goal_success(s, ep.task) && ep.actions.size() < kMaxStates - 1) {
    Action a = scripted_expert(s, ep.task);
    s = step(s, a);
    ep.actions.push_back(a);
    ep.states.push_back(s);
  }
  if (!goal_success(s, ep.task))
    throw std::runtime_error("generate_episode: expert failed task " +
                             ep.task.id() + " at seed " + std::to_string(seed));
  auto instrs = instruction_pair(ep.task, instr_rng);
  ep.instruction = instrs.first;
  ep.instruction_alt = instrs.second;
  ep.frame_features = frame_features_of(ep.states, noise_std, noise_rng);
  ep.video_feature = video_feature_of(ep.frame_features);
  return ep;
}

std::vector<Episode> generate_corpus(uint64_t corpus_seed, size_t n,
                                     double noise_std) {
  num::Rng root(corpus_seed);
  num::Rng ep_rng = root.split("episode");
  std::vector<Episode> out;
  out.reserve(n);
  const auto& tasks = TaskSpec::all();
  for (size_t i = 0; i < n; ++i) {
    uint64_t seed = ep_rng.split(i).seed53();
    out.push_back(generate_episode(tasks[i % tasks.size()], seed, noise_std));
  }
  return out;
}

}  // namespace ec2lab::world
