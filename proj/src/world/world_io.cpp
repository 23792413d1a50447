#include <sstream>

#include "ec2lab/util/fsio.hpp"
#include "ec2lab/world/world.hpp"
#include "json.hpp"

namespace ec2lab::world {

using ordered_json = nlohmann::ordered_json;

void write_jsonl(const std::string& path, const std::vector<Episode>& episodes) {
  std::ostringstream out;
  for (const Episode& ep : episodes) {
    ordered_json rec;
    rec["task_id"] = ep.task.id();
    rec["seed"] = ep.seed;
    rec["instruction"] = ep.instruction;
    ordered_json states = ordered_json::array();
    for (const WorldState& s : ep.states) {
      ordered_json row = ordered_json::array();
      for (double v : s.vec()) row.push_back(v);
      states.push_back(std::move(row));
    }
    rec["states"] = std::move(states);
    ordered_json actions = ordered_json::array();
    for (const Action& a : ep.actions) {
      ordered_json row = ordered_json::array();
      for (double v : a.vec()) row.push_back(v);
      actions.push_back(std::move(row));
    }
    rec["actions"] = std::move(actions);
    ordered_json vf = ordered_json::array();
    for (double v : ep.video_feature.data) vf.push_back(v);
    rec["video_feature"] = std::move(vf);
    out << rec.dump() << "\n";
  }
  util::atomic_write(path, out.str());
}

std::vector<Episode> read_jsonl(const std::string& path, double noise_std) {
  std::istringstream in(util::read_file(path));
  std::vector<Episode> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ordered_json rec;
    try {
      rec = ordered_json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("read_jsonl: " + path + ":" +
                               std::to_string(lineno) + ": " + e.what());
    }
    Episode ep;
    ep.task = TaskSpec::by_id(rec.at("task_id").get<std::string>());
    ep.seed = rec.at("seed").get<uint64_t>();
    ep.instruction = rec.at("instruction").get<std::string>();
    for (const auto& row : rec.at("states")) {
      std::array<double, kStateDim> v{};
      if (row.size() != kStateDim)
        throw std::runtime_error("read_jsonl: bad state width at line " +
                                 std::to_string(lineno));
      for (size_t j = 0; j < kStateDim; ++j) v[j] = row[j].get<double>();
      ep.states.push_back(WorldState::from_vec(v));
    }
    for (const auto& row : rec.at("actions")) {
      if (row.size() != kActionDim)
        throw std::runtime_error("read_jsonl: bad action width at line " +
                                 std::to_string(lineno));
      ep.actions.emplace_back(row[0].get<double>(), row[1].get<double>(),
                              row[2].get<double>());
    }
    const auto& vf = rec.at("video_feature");
    if (vf.size() != kVideoDim)
      throw std::runtime_error("read_jsonl: bad video_feature width at line " +
                               std::to_string(lineno));
    ep.video_feature = num::Array::zeros({kVideoDim});
    for (size_t j = 0; j < kVideoDim; ++j)
      ep.video_feature.data[j] = vf[j].get<double>();
    // Reconstruct derived fields exactly as generate_episode built them.
    num::Rng root(ep.seed);
    num::Rng instr_rng = root.split("instr");
    num::Rng noise_rng = root.split("noise");
    TaskSpec task = ep.task;
    // First element of the pair is the stored instruction; keep the one
    // actually read from the record and take only the eval paraphrase.
    ep.instruction_alt = instruction_pair(task, instr_rng).second;
    // Push goals are reset-time draws; rebuild them from the seed.
    num::Rng reset_rng = root.split("reset");
    (void)reset_state(ep.task, reset_rng);
    ep.frame_features = frame_features_of(ep.states, noise_std, noise_rng);
    out.push_back(std::move(ep));
  }
  return out;
}

}  // namespace ec2lab::world
