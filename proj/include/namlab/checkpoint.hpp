// Checkpoint files: a versioned JSON object mapping parameter name to shape
// and flat values, plus free-form metadata (model configuration etc.).
//
//   {"format": "namlab.checkpoint", "version": 1, "dtype": "float32",
//    "meta": {...}, "params": {"<name>": {"shape": [..], "values": [..]}}}
//
// Values are written with shortest round-trip formatting, so 32-bit
// parameters survive save/load bit-exactly.
#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "namlab/optim.hpp"

namespace namlab {

inline constexpr int kCheckpointVersion = 1;

template <typename T>
nlohmann::json checkpoint_to_json(const ParameterSet<T>& params, const nlohmann::json& meta);

// Copies values into params. Names and shapes must match exactly.
template <typename T>
void checkpoint_from_json(const nlohmann::json& doc, ParameterSet<T>& params);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params,
                     const nlohmann::json& meta = nlohmann::json::object());

// Reads the document only; use checkpoint_from_json to populate parameters.
nlohmann::json read_checkpoint(const std::filesystem::path& path);

}  // namespace namlab
