#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>

#include "seqret/diff/adam.hpp"
#include "seqret/diff/param_store.hpp"

namespace seqret::diff {

inline constexpr int kCheckpointFormatVersion = 1;

/// {"format_version": 1, "params": {name: {"shape": [...], "data": [...]}},
///  "adam": {...}?, "buffers": {...}?, "meta": {...}?}
struct Checkpoint {
  ParamStore params;
  ParamStore buffers;  // non-trainable tensors (e.g. Fisher statistics)
  nlohmann::json meta = nlohmann::json::object();
  std::optional<AdamState> adam;
};

nlohmann::json params_to_json(const ParamStore& params);
ParamStore params_from_json(const nlohmann::json& j);

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Read and parse a JSON document; FormatError on I/O or parse failure.
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace seqret::diff
