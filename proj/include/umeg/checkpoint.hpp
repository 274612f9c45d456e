#pragma once

// Versioned checkpoint container shared by the graph teacher and the raster
// student: {format, version, kind, config, layout, tensors}. Tensors are keyed
// by manifest name; loading refuses any manifest or kind mismatch.

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include <json.hpp>

#include "umeg/nn.hpp"

namespace umeg::ckpt {

inline constexpr std::string_view kFormat = "umeg-checkpoint";
inline constexpr int kVersion = 1;

nlohmann::json make_checkpoint(std::string_view kind, const nlohmann::json& config,
                               std::span<nn::Parameter* const> params);
void save(const std::filesystem::path& path, const nlohmann::json& checkpoint);
// Throws LoadError on unreadable files, wrong format or version.
nlohmann::json read(const std::filesystem::path& path);
// Throws LoadError when the kind differs or the stored manifest does not
// match `params` exactly (names, order, shapes).
void load_parameters(const nlohmann::json& checkpoint, std::string_view kind,
                     std::span<nn::Parameter* const> params);

}  // namespace umeg::ckpt
