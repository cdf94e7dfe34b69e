#include "seqret/diff/checkpoint.hpp"

#include <fstream>

#include "seqret/errors.hpp"

namespace seqret::diff {

using nlohmann::json;

json params_to_json(const ParamStore& params) {
  json out = json::object();
  for (const auto& [name, t] : params) {
    out[name] = {{"shape", t.shape()}, {"data", t.storage()}};
  }
  return out;
}

ParamStore params_from_json(const json& j) {
  if (!j.is_object()) throw FormatError("parameter block must be a JSON object");
  ParamStore store;
  for (const auto& [name, entry] : j.items()) {
    if (!entry.contains("shape") || !entry.contains("data")) throw FormatError("parameter '" + name + "' lacks shape or data");
    auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    auto data = entry.at("data").get<std::vector<double>>();
    if (data.size() != shape_numel(shape)) throw FormatError("parameter '" + name + "' data length does not match shape");
    store.add(name, Tensor(std::move(shape), std::move(data)));
  }
  return store;
}

json checkpoint_to_json(const Checkpoint& ckpt) {
  json out = {{"format_version", kCheckpointFormatVersion}, {"params", params_to_json(ckpt.params)}};
  if (ckpt.buffers.tensor_count() > 0) out["buffers"] = params_to_json(ckpt.buffers);
  if (!ckpt.meta.empty()) out["meta"] = ckpt.meta;
  if (ckpt.adam) {
    const AdamState& a = *ckpt.adam;
    out["adam"] = {{"lr", a.config.lr}, {"beta1", a.config.beta1}, {"beta2", a.config.beta2}, {"eps", a.config.eps},
                   {"step", a.step},    {"m", a.m},                {"v", a.v}};
  }
  return out;
}

Checkpoint checkpoint_from_json(const json& j) {
  if (!j.is_object() || !j.contains("format_version")) throw FormatError("checkpoint lacks format_version");
  const int version = j.at("format_version").get<int>();
  if (version != kCheckpointFormatVersion) {
    throw FormatError("incompatible checkpoint format_version " + std::to_string(version));
  }
  Checkpoint ckpt;
  try {
    ckpt.params = params_from_json(j.at("params"));
    if (j.contains("buffers")) ckpt.buffers = params_from_json(j.at("buffers"));
    if (j.contains("meta")) ckpt.meta = j.at("meta");
    if (j.contains("adam")) {
      const json& a = j.at("adam");
      AdamState s;
      s.config = {a.at("lr").get<double>(), a.at("beta1").get<double>(), a.at("beta2").get<double>(), a.at("eps").get<double>()};
      s.step = a.at("step").get<std::uint64_t>();
      s.m = a.at("m").get<std::vector<double>>();
      s.v = a.at("v").get<std::vector<double>>();
      if (s.m.size() != ckpt.params.size() || s.v.size() != ckpt.params.size()) {
        throw FormatError("adam moments do not match parameter count");
      }
      ckpt.adam = std::move(s);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what());
  }
  return ckpt;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump() << '\n';
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_json_file(path, checkpoint_to_json(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_json(read_json_file(path)); }

}  // namespace seqret::diff
