#include "ec2lab/models/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <stdexcept>

#include "ec2lab/util/fsio.hpp"
#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian");

namespace ec2lab::models {

void save_checkpoint(const num::ParamStore& params, const std::string& path) {
  nlohmann::ordered_json manifest;
  manifest["format_version"] = 1;
  manifest["tensors"] = nlohmann::ordered_json::array();
  size_t total = 0;
  for (const num::Parameter* p : params.all()) {
    manifest["tensors"].push_back(
        {{"name", p->name}, {"shape", p->value.shape}, {"dtype", "f32"}});
    total += p->value.numel();
  }
  std::string out = manifest.dump();
  out += '\n';
  out.reserve(out.size() + 4 * total);
  for (const num::Parameter* p : params.all()) {
    for (double v : p->value.data) {
      float f = static_cast<float>(v);
      char buf[4];
      std::memcpy(buf, &f, 4);
      out.append(buf, 4);
    }
  }
  util::atomic_write(path, out);
}

void load_checkpoint(num::ParamStore& params, const std::string& path) {
  std::string blob = util::read_file(path);
  size_t nl = blob.find('\n');
  if (nl == std::string::npos)
    throw std::runtime_error("checkpoint corrupt: no manifest line in " + path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(blob.substr(0, nl));
  } catch (const std::exception& e) {
    throw std::runtime_error("checkpoint corrupt: bad manifest in " + path +
                             ": " + e.what());
  }
  int version = manifest.at("format_version").get<int>();
  if (version != 1)
    throw std::runtime_error("checkpoint format version " +
                             std::to_string(version) + " not supported (" +
                             path + ")");
  const auto& tensors = manifest.at("tensors");
  size_t total = 0;
  for (const auto& t : tensors) {
    if (t.at("dtype").get<std::string>() != "f32")
      throw std::runtime_error("checkpoint corrupt: dtype " +
                               t.at("dtype").get<std::string>() + " in " + path);
    size_t n = 1;
    for (size_t d : t.at("shape").get<std::vector<size_t>>()) n *= d;
    total += n;
  }
  size_t payload = blob.size() - nl - 1;
  if (payload != 4 * total)
    throw std::runtime_error(
        "checkpoint corrupt: payload is " + std::to_string(payload) +
        " bytes, manifest expects " + std::to_string(4 * total) + " (" + path +
        ")");
  if (tensors.size() != params.all().size())
    throw std::runtime_error(
        "checkpoint corrupt: " + std::to_string(tensors.size()) +
        " tensors for a model with " + std::to_string(params.all().size()) +
        " parameters (" + path + ")");
  // Validate everything first so a bad file never half-loads.
  std::vector<num::Parameter*> order;
  for (const auto& t : tensors) {
    std::string name = t.at("name").get<std::string>();
    auto shape = t.at("shape").get<std::vector<size_t>>();
    if (!params.has(name))
      throw std::runtime_error("checkpoint corrupt: unknown tensor '" + name +
                               "' (" + path + ")");
    num::Parameter* p = params.get(name);
    if (p->value.shape != shape)
      throw std::runtime_error("checkpoint corrupt: tensor '" + name +
                               "' shape mismatch (" + path + ")");
    order.push_back(p);
  }
  const char* cur = blob.data() + nl + 1;
  for (num::Parameter* p : order) {
    for (double& v : p->value.data) {
      float f;
      std::memcpy(&f, cur, 4);
      cur += 4;
      v = static_cast<double>(f);
    }
  }
}

}  // namespace ec2lab::models
