#include "che/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "che/error.hpp"

namespace che {

namespace {

void append_double(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

void append_json_string(std::string& out, const std::string& s) {
  out += '"';
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out += c;
    }
  }
  out += '"';
}

}  // namespace

bool Checkpoint::operator==(const Checkpoint& other) const {
  if (format_version != other.format_version || model_kind != other.model_kind ||
      dim_m != other.dim_m || dim_n != other.dim_n || dim_r != other.dim_r ||
      seed != other.seed || params.size() != other.params.size()) {
    return false;
  }
  for (const auto& [name, tensor] : params) {
    auto it = other.params.find(name);
    if (it == other.params.end() || tensor.shape() != it->second.shape() ||
        tensor.data() != it->second.data()) {
      return false;
    }
  }
  return true;
}

std::string checkpoint_to_json(const Checkpoint& ckpt) {
  std::string out;
  out.reserve(64 + ckpt.params.size() * 64);
  out += "{\"dims\":{\"M\":" + std::to_string(ckpt.dim_m) +
         ",\"N\":" + std::to_string(ckpt.dim_n) + ",\"r\":" + std::to_string(ckpt.dim_r) +
         "},\"format_version\":" + std::to_string(ckpt.format_version) + ",\"model_kind\":";
  append_json_string(out, ckpt.model_kind);
  out += ",\"params\":{";
  bool first_param = true;
  for (const auto& [name, tensor] : ckpt.params) {
    if (!first_param) out += ',';
    first_param = false;
    append_json_string(out, name);
    out += ":{\"data\":[";
    for (std::size_t i = 0; i < tensor.numel(); ++i) {
      if (i) out += ',';
      append_double(out, tensor[i]);
    }
    out += "],\"shape\":[";
    for (std::size_t i = 0; i < tensor.shape().size(); ++i) {
      if (i) out += ',';
      out += std::to_string(tensor.shape()[i]);
    }
    out += "]}";
  }
  out += "},\"seed\":" + std::to_string(ckpt.seed) + "}";
  return out;
}

Checkpoint checkpoint_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: malformed JSON: ") + e.what());
  }
  Checkpoint ckpt;
  try {
    ckpt.format_version = doc.at("format_version").get<int>();
    if (ckpt.format_version != 1) {
      throw IoError("checkpoint: unsupported format_version " +
                    std::to_string(ckpt.format_version));
    }
    ckpt.model_kind = doc.at("model_kind").get<std::string>();
    const auto& dims = doc.at("dims");
    ckpt.dim_m = dims.at("M").get<std::size_t>();
    ckpt.dim_n = dims.at("N").get<std::size_t>();
    ckpt.dim_r = dims.at("r").get<std::size_t>();
    ckpt.seed = doc.at("seed").get<std::uint64_t>();
    for (const auto& [name, entry] : doc.at("params").items()) {
      std::vector<std::size_t> shape = entry.at("shape").get<std::vector<std::size_t>>();
      std::vector<double> data = entry.at("data").get<std::vector<double>>();
      ckpt.params.emplace(name, Tensor(std::move(shape), std::move(data)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: missing or invalid field: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot open for writing: " + path);
  out << checkpoint_to_json(ckpt) << "\n";
  if (!out) throw IoError("checkpoint: write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return checkpoint_from_json(buffer.str());
}

}  // namespace che
