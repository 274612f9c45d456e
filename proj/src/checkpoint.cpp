#include "umeg/checkpoint.hpp"

#include <fstream>

#include "umeg/errors.hpp"

namespace umeg::ckpt {

using nlohmann::json;

json make_checkpoint(std::string_view kind, const json& config,
                     std::span<nn::Parameter* const> params) {
  json layout = json::array();
  json tensors = json::object();
  for (const nn::Parameter* p : params) {
    layout.push_back({{"name", p->name}, {"shape", p->shape}});
    tensors[p->name] = {{"shape", p->shape}, {"data", p->value}};
  }
  return {{"format", kFormat}, {"version", kVersion}, {"kind", kind},
          {"config", config},  {"layout", layout},    {"tensors", tensors}};
}

void save(const std::filesystem::path& path, const json& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write checkpoint '" + path.string() + "'");
  out << checkpoint.dump() << '\n';
  if (!out) throw LoadError("failed writing checkpoint '" + path.string() + "'");
}

json read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError("checkpoint '" + path.string() + "': " + e.what());
  }
  if (!j.is_object() || j.value("format", "") != kFormat) {
    throw LoadError("'" + path.string() + "' is not a umeg checkpoint");
  }
  if (j.value("version", 0) != kVersion) {
    throw LoadError("checkpoint '" + path.string() + "': unsupported version " +
                    j.value("version", json()).dump());
  }
  return j;
}

void load_parameters(const json& checkpoint, std::string_view kind,
                     std::span<nn::Parameter* const> params) {
  const std::string got = checkpoint.value("kind", "");
  if (got != kind) {
    throw LoadError("checkpoint kind '" + got + "' where '" + std::string(kind) + "' was expected");
  }
  try {
    const json& layout = checkpoint.at("layout");
    const json& tensors = checkpoint.at("tensors");
    if (layout.size() != params.size() || tensors.size() != params.size()) {
      throw LoadError("checkpoint manifest has " + std::to_string(layout.size()) +
                      " tensors, model has " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      nn::Parameter& p = *params[i];
      const std::string name = layout[i].at("name").get<std::string>();
      const auto shape = layout[i].at("shape").get<std::vector<std::size_t>>();
      if (name != p.name || shape != p.shape) {
        throw LoadError("checkpoint manifest mismatch at entry " + std::to_string(i) + ": '" +
                        name + "' vs model '" + p.name + "'");
      }
      const json& t = tensors.at(p.name);
      auto data = t.at("data").get<std::vector<double>>();
      if (t.at("shape").get<std::vector<std::size_t>>() != p.shape || data.size() != p.size()) {
        throw LoadError("checkpoint tensor '" + p.name + "' has the wrong size");
      }
      p.value = std::move(data);
    }
  } catch (const json::exception& e) {
    throw LoadError(std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace umeg::ckpt
