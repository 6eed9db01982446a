// Copyright 2026 The himapper Authors
// SPDX-License-Identifier: Apache-2.0

#include "himapper/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <json.hpp>

#include "himapper/errors.hpp"

namespace himapper {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'H', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_pod(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IoError("checkpoint '" + path + "' is truncated");
  return v;
}

json config_to_json(const RunConfig& config) {
  json j = json::object();
  visit_fields(config, [&](const char* name, const auto& value) { j[name] = value; });
  return j;
}

RunConfig config_from_json(const json& j) {
  RunConfig config;
  visit_fields(config, [&](const char* name, auto& member) {
    if (!j.contains(name)) throw ConfigError(std::string("checkpoint config lacks '") + name + "'");
    try {
      j.at(name).get_to(member);
    } catch (const json::exception&) {
      throw ConfigError(std::string("checkpoint config field '") + name + "' has the wrong type");
    }
  });
  return config;
}

struct Blob {
  Shape shape;
  std::vector<double> values;
};

struct RawCheckpoint {
  json header;
  std::map<std::string, Blob> blobs;
};

RawCheckpoint read_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw IoError("'" + path + "' is not a checkpoint");
  if (read_pod<std::uint32_t>(in, path) != kVersion) throw IoError("checkpoint '" + path + "' has an unknown version");
  const auto header_size = read_pod<std::uint64_t>(in, path);
  if (header_size > (1u << 24)) throw IoError("checkpoint '" + path + "' has a corrupt header");
  std::string text(header_size, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_size));
  if (!in) throw IoError("checkpoint '" + path + "' is truncated");
  RawCheckpoint raw;
  try {
    raw.header = json::parse(text);
  } catch (const json::exception&) {
    throw IoError("checkpoint '" + path + "' has a malformed header");
  }
  const auto count = read_pod<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_size = read_pod<std::uint32_t>(in, path);
    if (name_size > 4096) throw IoError("checkpoint '" + path + "' is corrupt");
    std::string name(name_size, '\0');
    in.read(name.data(), name_size);
    Blob blob;
    const auto rank = read_pod<std::uint32_t>(in, path);
    if (rank > 8) throw IoError("checkpoint '" + path + "' is corrupt");
    std::size_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      blob.shape.push_back(read_pod<std::uint64_t>(in, path));
      numel *= blob.shape.back();
    }
    if (numel > (std::size_t{1} << 30)) throw IoError("checkpoint '" + path + "' is corrupt");
    blob.values.resize(numel);
    in.read(reinterpret_cast<char*>(blob.values.data()), static_cast<std::streamsize>(numel * sizeof(double)));
    if (!in) throw IoError("checkpoint '" + path + "' is truncated");
    raw.blobs.emplace(std::move(name), std::move(blob));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError("checkpoint '" + path + "' has trailing bytes");
  return raw;
}

void fill(const RawCheckpoint& raw, const ParameterSet& params, const std::string& path) {
  for (const auto& p : params.entries()) {
    auto it = raw.blobs.find(p.name);
    if (it == raw.blobs.end()) throw ConfigError("checkpoint '" + path + "' has no parameter '" + p.name + "'");
    if (it->second.shape != p.tensor.shape()) {
      throw ConfigError("checkpoint '" + path + "': parameter '" + p.name + "' is " + shape_string(it->second.shape) +
                        " but the model expects " + shape_string(p.tensor.shape()));
    }
    Tensor t = p.tensor;
    auto dst = t.mutable_values();
    std::copy(it->second.values.begin(), it->second.values.end(), dst.begin());
  }
}

CheckpointInfo info_from(const json& header) {
  CheckpointInfo info;
  info.kind = header.value("kind", "");
  if (header.contains("metrics") && header["metrics"].is_object()) {
    for (const auto& [k, v] : header["metrics"].items())
      if (v.is_number()) info.metrics[k] = v.get<double>();
  }
  return info;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const CheckpointInfo& info) {
  json header;
  header["format"] = "himapper-checkpoint";
  header["kind"] = info.kind;
  header["config"] = config_to_json(model.config);
  header["metrics"] = info.metrics;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(kMagic, 4);
  write_pod(out, kVersion);
  write_pod<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const ParameterSet params = model.all_parameters();
  write_pod<std::uint64_t>(out, params.size());
  for (const auto& p : params.entries()) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (std::size_t dim : p.tensor.shape()) write_pod<std::uint64_t>(out, dim);
    const auto values = p.tensor.values();
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  }
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  RawCheckpoint raw = read_raw(path);
  if (!raw.header.contains("config")) throw IoError("checkpoint '" + path + "' has no config");
  LoadedCheckpoint out{Model::create(config_from_json(raw.header["config"])), info_from(raw.header)};
  fill(raw, out.model.all_parameters(), path);
  return out;
}

CheckpointInfo load_backbone(const std::string& path, Model& model) {
  RawCheckpoint raw = read_raw(path);
  ParameterSet params;
  model.collect_backbone(params);
  fill(raw, params, path);
  return info_from(raw.header);
}

}  // namespace himapper
