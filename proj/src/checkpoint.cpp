#include "namlab/checkpoint.hpp"

#include <fstream>
#include <stdexcept>
#include <type_traits>

namespace namlab {

namespace {
template <typename T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "float32" : "float64";
}
}  // namespace

template <typename T>
nlohmann::json checkpoint_to_json(const ParameterSet<T>& params, const nlohmann::json& meta) {
  nlohmann::json doc;
  doc["format"] = "namlab.checkpoint";
  doc["version"] = kCheckpointVersion;
  doc["dtype"] = dtype_name<T>();
  doc["meta"] = meta;
  nlohmann::json entries = nlohmann::json::object();
  for (const auto& [name, tensor] : params.entries()) {
    nlohmann::json e;
    e["shape"] = tensor.shape();
    auto values = nlohmann::json::array();
    for (T v : tensor.data()) values.push_back(static_cast<double>(v));
    e["values"] = std::move(values);
    entries[name] = std::move(e);
  }
  doc["params"] = std::move(entries);
  return doc;
}

template <typename T>
void checkpoint_from_json(const nlohmann::json& doc, ParameterSet<T>& params) {
  if (doc.value("format", "") != "namlab.checkpoint") throw std::runtime_error("checkpoint: not a namlab checkpoint");
  if (doc.value("version", 0) != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + doc.value("version", nlohmann::json()).dump());
  }
  const auto& entries = doc.at("params");
  if (entries.size() != params.entries().size()) {
    throw std::runtime_error("checkpoint: holds " + std::to_string(entries.size()) + " parameters, model has " +
                             std::to_string(params.entries().size()));
  }
  for (const auto& [name, tensor] : params.entries()) {
    if (!entries.contains(name)) throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
    const auto& e = entries.at(name);
    const Shape shape = e.at("shape").template get<Shape>();
    if (shape != tensor.shape()) {
      throw std::runtime_error("checkpoint: parameter '" + name + "' has shape " + shape_str(shape) +
                               ", model expects " + shape_str(tensor.shape()));
    }
    const auto& values = e.at("values");
    auto dst = Tensor<T>(tensor).mutable_data();
    if (values.size() != dst.size()) throw std::runtime_error("checkpoint: value count mismatch for '" + name + "'");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(values[i].template get<double>());
  }
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params, const nlohmann::json& meta) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
  out << checkpoint_to_json(params, meta).dump();
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

nlohmann::json read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: " + path.string() + ": " + e.what());
  }
}

template nlohmann::json checkpoint_to_json<float>(const ParameterSet<float>&, const nlohmann::json&);
template nlohmann::json checkpoint_to_json<double>(const ParameterSet<double>&, const nlohmann::json&);
template void checkpoint_from_json<float>(const nlohmann::json&, ParameterSet<float>&);
template void checkpoint_from_json<double>(const nlohmann::json&, ParameterSet<double>&);
template void save_checkpoint<float>(const std::filesystem::path&, const ParameterSet<float>&, const nlohmann::json&);
template void save_checkpoint<double>(const std::filesystem::path&, const ParameterSet<double>&, const nlohmann::json&);

}  // namespace namlab
