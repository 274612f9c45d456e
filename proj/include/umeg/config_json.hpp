#pragma once

// JSON mapping for every configuration struct. Missing keys keep their
// defaults; unknown keys raise ConfigError so typos do not pass silently.

#include <json.hpp>

#include "umeg/event_head.hpp"
#include "umeg/graph_builder.hpp"
#include "umeg/keypoint_data.hpp"
#include "umeg/umeg_net.hpp"

namespace umeg::data {
void to_json(nlohmann::json& j, const EntityLayout& v);
void from_json(const nlohmann::json& j, EntityLayout& v);
void to_json(nlohmann::json& j, const SynthConfig& v);
void from_json(const nlohmann::json& j, SynthConfig& v);
}  // namespace umeg::data

namespace umeg::net {
void to_json(nlohmann::json& j, const BlockConfig& v);
void from_json(const nlohmann::json& j, BlockConfig& v);
}  // namespace umeg::net

namespace umeg::head {
void to_json(nlohmann::json& j, const TrainConfig& v);
void from_json(const nlohmann::json& j, TrainConfig& v);
void to_json(nlohmann::json& j, const DecodeConfig& v);
void from_json(const nlohmann::json& j, DecodeConfig& v);
}  // namespace umeg::head

namespace umeg::cfg {
// Throws ConfigError naming the first key of `j` not in `allowed`.
void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                std::string_view section);

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->template get<T>();
}
}  // namespace umeg::cfg
