#include "umeg/config_json.hpp"

#include <algorithm>
#include <cstring>

#include "umeg/errors.hpp"

namespace umeg::cfg {

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                std::string_view section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* a) { return key == a; });
    if (!known) throw ConfigError(std::string(section) + ": unknown key '" + key + "'");
  }
}

}  // namespace umeg::cfg

namespace umeg::data {

void to_json(nlohmann::json& j, const EntityLayout& v) {
  j = {{"num_persons", v.num_persons},
       {"joints_per_person", v.joints_per_person},
       {"has_ball", v.has_ball},
       {"num_court_points", v.num_court_points}};
}

void from_json(const nlohmann::json& j, EntityLayout& v) {
  cfg::check_keys(j, {"num_persons", "joints_per_person", "has_ball", "num_court_points"}, "layout");
  cfg::read_opt(j, "num_persons", v.num_persons);
  cfg::read_opt(j, "joints_per_person", v.joints_per_person);
  cfg::read_opt(j, "has_ball", v.has_ball);
  cfg::read_opt(j, "num_court_points", v.num_court_points);
}

void to_json(nlohmann::json& j, const SynthConfig& v) {
  j = {{"num_clips", v.num_clips},       {"frames_per_clip", v.frames_per_clip},
       {"layout", v.layout},             {"gap_min", v.gap_min},
       {"gap_max", v.gap_max},           {"noise_sigma", v.noise_sigma},
       {"missing_prob", v.missing_prob}, {"speed_threshold", v.speed_threshold},
       {"fps", v.fps},                   {"seed", v.seed}};
}

void from_json(const nlohmann::json& j, SynthConfig& v) {
  cfg::check_keys(j, {"num_clips", "frames_per_clip", "layout", "gap_min", "gap_max",
                      "noise_sigma", "missing_prob", "speed_threshold", "fps", "seed"},
                  "synth");
  cfg::read_opt(j, "num_clips", v.num_clips);
  cfg::read_opt(j, "frames_per_clip", v.frames_per_clip);
  cfg::read_opt(j, "layout", v.layout);
  cfg::read_opt(j, "gap_min", v.gap_min);
  cfg::read_opt(j, "gap_max", v.gap_max);
  cfg::read_opt(j, "noise_sigma", v.noise_sigma);
  cfg::read_opt(j, "missing_prob", v.missing_prob);
  cfg::read_opt(j, "speed_threshold", v.speed_threshold);
  cfg::read_opt(j, "fps", v.fps);
  cfg::read_opt(j, "seed", v.seed);
}

}  // namespace umeg::data

namespace umeg::net {

void to_json(nlohmann::json& j, const BlockConfig& v) {
  j = {{"widths", v.widths},
       {"shift_fraction", v.shift_fraction},
       {"deltas", v.deltas},
       {"refine_topology", v.refine_topology},
       {"lift_norm", v.lift_norm},
       {"identity_shift", v.identity_shift}};
}

void from_json(const nlohmann::json& j, BlockConfig& v) {
  cfg::check_keys(j, {"widths", "shift_fraction", "deltas", "refine_topology", "lift_norm",
                      "identity_shift"},
                  "blocks");
  cfg::read_opt(j, "widths", v.widths);
  cfg::read_opt(j, "shift_fraction", v.shift_fraction);
  cfg::read_opt(j, "deltas", v.deltas);
  cfg::read_opt(j, "refine_topology", v.refine_topology);
  cfg::read_opt(j, "lift_norm", v.lift_norm);
  cfg::read_opt(j, "identity_shift", v.identity_shift);
}

}  // namespace umeg::net

namespace umeg::head {

void to_json(nlohmann::json& j, const TrainConfig& v) {
  j = {{"seq_len", v.seq_len},
       {"stride", v.stride},
       {"foreground_weight", v.foreground_weight},
       {"epochs", v.epochs},
       {"lr", v.lr},
       {"warmup_steps", v.warmup_steps},
       {"warmup_unit", std::string(to_string(v.warmup_unit))},
       {"batch_size", v.batch_size},
       {"weight_decay", v.weight_decay},
       {"val_fraction", v.val_fraction},
       {"min_val_clips", v.min_val_clips},
       {"max_windows_per_clip", v.max_windows_per_clip},
       {"seed", v.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& v) {
  cfg::check_keys(j, {"seq_len", "stride", "foreground_weight", "epochs", "lr", "warmup_steps",
                      "warmup_unit", "batch_size", "weight_decay", "val_fraction",
                      "min_val_clips", "max_windows_per_clip", "seed"},
                  "train");
  cfg::read_opt(j, "seq_len", v.seq_len);
  cfg::read_opt(j, "stride", v.stride);
  cfg::read_opt(j, "foreground_weight", v.foreground_weight);
  cfg::read_opt(j, "epochs", v.epochs);
  cfg::read_opt(j, "lr", v.lr);
  cfg::read_opt(j, "warmup_steps", v.warmup_steps);
  if (j.contains("warmup_unit")) v.warmup_unit = parse_warmup_unit(j.at("warmup_unit").get<std::string>());
  cfg::read_opt(j, "batch_size", v.batch_size);
  cfg::read_opt(j, "weight_decay", v.weight_decay);
  cfg::read_opt(j, "val_fraction", v.val_fraction);
  cfg::read_opt(j, "min_val_clips", v.min_val_clips);
  cfg::read_opt(j, "max_windows_per_clip", v.max_windows_per_clip);
  cfg::read_opt(j, "seed", v.seed);
}

void to_json(nlohmann::json& j, const DecodeConfig& v) {
  j = {{"threshold", v.threshold}, {"radius", v.radius}};
}

void from_json(const nlohmann::json& j, DecodeConfig& v) {
  cfg::check_keys(j, {"threshold", "radius"}, "decode");
  cfg::read_opt(j, "threshold", v.threshold);
  cfg::read_opt(j, "radius", v.radius);
}

}  // namespace umeg::head
