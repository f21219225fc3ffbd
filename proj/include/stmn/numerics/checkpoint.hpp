#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "stmn/errors.hpp"
#include "stmn/numerics/tensor.hpp"

namespace stmn {

enum class Init { uniform_fan_in, zeros, ones };

// Ordered collection of named trainable tensors. Order is creation order and is
// the order used for optimizer state and checkpoints.
class ParamStore {
 public:
  Tensor& create(const std::string& name, Shape shape, Init init, std::mt19937_64& rng) {
    if (index_.contains(name)) throw ContractError("duplicate parameter name " + name);
    Tensor t = Tensor::zeros(shape, true);
    auto v = t.mutable_data();
    switch (init) {
      case Init::zeros: break;
      case Init::ones: std::fill(v.begin(), v.end(), 1.0); break;
      case Init::uniform_fan_in: {
        const double fan_in = static_cast<double>(shape.empty() ? 1 : shape.front());
        const double bound = 1.0 / std::sqrt(fan_in);
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& x : v) x = dist(rng);
        break;
      }
    }
    index_[name] = params_.size();
    names_.push_back(name);
    params_.push_back(std::move(t));
    return params_.back();
  }

  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter " + name);
    return params_[it->second];
  }
  Tensor& get(const std::string& name) {
    return const_cast<Tensor&>(static_cast<const ParamStore&>(*this).get(name));
  }
  bool contains(const std::string& name) const { return index_.contains(name); }

  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor>& tensors() { return params_; }
  const std::vector<Tensor>& tensors() const { return params_; }
  std::size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void put_le(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

inline double get_le(const char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b)
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

// File layout: one line of compact UTF-8 JSON (the manifest), a newline, then
// each array's little-endian float64 payload, contiguous, in manifest order.
// Offsets in the manifest are relative to the first payload byte.
inline void save_checkpoint(const std::string& path, const std::vector<NamedArray>& arrays,
                            const nlohmann::json& extra) {
  nlohmann::json manifest;
  manifest["format"] = "stmn-checkpoint";
  manifest["version"] = kCheckpointVersion;
  manifest["params"] = nlohmann::json::array();
  std::string payload;
  for (const auto& a : arrays) {
    if (numel(a.shape) != a.values.size()) {
      throw ShapeError("checkpoint entry " + a.name + " has shape " + shape_str(a.shape) +
                       " but " + std::to_string(a.values.size()) + " values");
    }
    manifest["params"].push_back({{"name", a.name},
                                  {"shape", a.shape},
                                  {"offset", payload.size()},
                                  {"bytes", a.values.size() * 8}});
    for (double v : a.values) detail::put_le(payload, v);
  }
  manifest["extra"] = extra;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  const std::string header = manifest.dump();
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.put('\n');
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("failed writing checkpoint " + path);
}

struct LoadedCheckpoint {
  std::vector<NamedArray> arrays;
  nlohmann::json extra;

  const NamedArray* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::string header;
  std::getline(in, header);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": malformed checkpoint manifest: " + e.what());
  }
  if (manifest.value("format", "") != "stmn-checkpoint" ||
      manifest.value("version", 0) != kCheckpointVersion) {
    throw ValidationError(path + ": unsupported checkpoint format");
  }
  std::ostringstream rest;
  rest << in.rdbuf();
  const std::string payload = rest.str();

  LoadedCheckpoint ck;
  for (const auto& p : manifest.at("params")) {
    NamedArray a;
    a.name = p.at("name").get<std::string>();
    a.shape = p.at("shape").get<Shape>();
    const auto offset = p.at("offset").get<std::size_t>();
    const auto bytes = p.at("bytes").get<std::size_t>();
    if (bytes != numel(a.shape) * 8 || offset + bytes > payload.size()) {
      throw ValidationError(path + ": truncated or inconsistent entry " + a.name);
    }
    a.values.resize(numel(a.shape));
    for (std::size_t i = 0; i < a.values.size(); ++i)
      a.values[i] = detail::get_le(payload.data() + offset + 8 * i);
    ck.arrays.push_back(std::move(a));
  }
  ck.extra = manifest.value("extra", nlohmann::json::object());
  return ck;
}

}  // namespace stmn
