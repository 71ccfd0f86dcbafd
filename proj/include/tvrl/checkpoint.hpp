#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <memory>

#include "tvrl/encoder.hpp"
#include "tvrl/objectives.hpp"

namespace tvrl {

/// Sidecar manifest stored next to the weight container.
struct CheckpointMeta {
  EncoderConfig encoder;
  LossConfig loss;
  std::string strategy;
  int epoch = 0;
  uint64_t seed = 0;
};

namespace detail {
constexpr char kWeightMagic[9] = "TVRLWGT1";

template <class T>
void write_tensor(std::ofstream& f, const std::string& name, const Mat<T>& m) {
  uint32_t len = static_cast<uint32_t>(name.size());
  uint64_t rows = static_cast<uint64_t>(m.rows()), cols = static_cast<uint64_t>(m.cols());
  f.write(reinterpret_cast<const char*>(&len), 4);
  f.write(name.data(), len);
  f.write(reinterpret_cast<const char*>(&rows), 8);
  f.write(reinterpret_cast<const char*>(&cols), 8);
  f.write(reinterpret_cast<const char*>(m.data()), sizeof(T) * m.size());
}
}  // namespace detail

/// Write `<base>.bin` (raw little-endian tensors) and `<base>.json` (the
/// manifest: encoder config, strategy, epoch, seed, and a config hash that
/// loaders verify).
template <class T>
void save_checkpoint(const std::string& base_path, const Model<T>& model,
                     const std::vector<const nn::ParamStore<T>*>& extra_stores,
                     const CheckpointMeta& meta) {
  std::ofstream bin(base_path + ".bin", std::ios::binary);
  if (!bin) throw io_error("cannot write " + base_path + ".bin");
  bin.write(detail::kWeightMagic, 8);
  uint32_t scalar = sizeof(T);
  bin.write(reinterpret_cast<const char*>(&scalar), 4);
  uint64_t count = model.params().all().size();
  for (const auto* s : extra_stores) count += s->all().size();
  bin.write(reinterpret_cast<const char*>(&count), 8);
  for (const auto* p : model.params().all())
    detail::write_tensor(bin, p->name, p->value);
  for (const auto* s : extra_stores)
    for (const auto* p : s->all()) detail::write_tensor(bin, p->name, p->value);
  if (!bin) throw io_error("short write to " + base_path + ".bin");

  nlohmann::json j;
  j["format"] = "tvrl-checkpoint-v1";
  j["encoder"] = meta.encoder;
  j["loss"] = meta.loss;
  j["strategy"] = meta.strategy;
  j["epoch"] = meta.epoch;
  j["seed"] = meta.seed;
  j["config_hash"] = config_hash(meta.encoder);
  std::ofstream js(base_path + ".json");
  if (!js) throw io_error("cannot write " + base_path + ".json");
  js << j.dump(2) << "\n";
}

template <class T>
struct LoadedCheckpoint {
  std::unique_ptr<Model<T>> model;
  CheckpointMeta meta;
  std::map<std::string, Mat<T>> tensors;  // everything in the container
};

/// Load a checkpoint pair. Fails loudly on: missing files, dtype mismatch,
/// manifest/config hash mismatch, or missing/misshapen model tensors.
template <class T>
LoadedCheckpoint<T> load_checkpoint(const std::string& base_path) {
  std::ifstream js(base_path + ".json");
  if (!js) throw io_error("cannot open " + base_path + ".json");
  nlohmann::json j = nlohmann::json::parse(js);
  LoadedCheckpoint<T> out;
  out.meta.encoder = j.at("encoder").get<EncoderConfig>();
  if (j.contains("loss")) out.meta.loss = j.at("loss").get<LossConfig>();
  out.meta.strategy = j.value("strategy", "unknown");
  out.meta.epoch = j.value("epoch", 0);
  out.meta.seed = j.value("seed", uint64_t{0});
  uint64_t stored_hash = j.at("config_hash").get<uint64_t>();
  if (stored_hash != config_hash(out.meta.encoder))
    throw io_error("checkpoint manifest corrupt: config hash mismatch");

  std::ifstream bin(base_path + ".bin", std::ios::binary);
  if (!bin) throw io_error("cannot open " + base_path + ".bin");
  char magic[8];
  bin.read(magic, 8);
  if (std::memcmp(magic, detail::kWeightMagic, 8) != 0)
    throw io_error("not a weight container: " + base_path + ".bin");
  uint32_t scalar = 0;
  bin.read(reinterpret_cast<char*>(&scalar), 4);
  if (scalar != sizeof(T))
    throw io_error("checkpoint scalar width mismatch (stored " +
                   std::to_string(scalar) + " bytes)");
  uint64_t count = 0;
  bin.read(reinterpret_cast<char*>(&count), 8);
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t len = 0;
    bin.read(reinterpret_cast<char*>(&len), 4);
    std::string name(len, '\0');
    bin.read(name.data(), len);
    uint64_t rows = 0, cols = 0;
    bin.read(reinterpret_cast<char*>(&rows), 8);
    bin.read(reinterpret_cast<char*>(&cols), 8);
    Mat<T> m(static_cast<int>(rows), static_cast<int>(cols));
    bin.read(reinterpret_cast<char*>(m.data()), sizeof(T) * m.size());
    if (!bin) throw io_error("truncated weight container: " + base_path + ".bin");
    out.tensors.emplace(std::move(name), std::move(m));
  }

  out.model = std::make_unique<Model<T>>(out.meta.encoder, /*seed=*/0);
  for (auto* p : out.model->params().all()) {
    auto it = out.tensors.find(p->name);
    if (it == out.tensors.end())
      throw io_error("checkpoint missing tensor: " + p->name);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
      throw io_error("checkpoint tensor shape mismatch: " + p->name);
    p->value = it->second;
  }
  return out;
}

}  // namespace tvrl
