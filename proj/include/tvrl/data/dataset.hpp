#pragma once

#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tvrl/image.hpp"
#include "tvrl/io/png.hpp"

namespace tvrl {

enum class TaskKind { kClassification, kRegression };

struct TaskDescriptor {
  std::string name;
  TaskKind kind = TaskKind::kRegression;
};

enum class Split { kTrain, kVal, kTest };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  throw contract_error("bad split value");
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw data_error("unknown split: " + s);
}

/// One patient/eye/heart image sequence with acquisition times and labels.
struct SequenceRecord {
  std::string sequence_id;
  std::string patient_id;
  std::vector<ImageU8> frames;
  std::vector<double> timestamps;
  std::map<std::string, double> labels;
  Split split = Split::kTrain;

  int length() const { return static_cast<int>(frames.size()); }

  void validate() const {
    if (frames.empty()) throw data_error(sequence_id + ": no frames");
    if (timestamps.size() != frames.size())
      throw data_error(sequence_id + ": timestamps/frames length mismatch");
    for (size_t i = 1; i < timestamps.size(); ++i)
      if (!(timestamps[i] > timestamps[i - 1]))
        throw data_error(sequence_id + ": timestamps must be strictly increasing");
    for (const auto& [k, v] : labels)
      if (!std::isfinite(v)) throw data_error(sequence_id + ": label " + k + " not finite");
  }
};

/// A dataset: time unit, task descriptors, and the sequence records with
/// their patient-exclusive split assignment.
struct DatasetManifest {
  std::string unit;  // "seconds" | "days"
  std::vector<TaskDescriptor> tasks;
  std::vector<SequenceRecord> records;
  std::array<double, 3> split_fractions = {0.70, 0.15, 0.15};

  std::vector<int> split_indices(Split s) const {
    std::vector<int> out;
    for (size_t i = 0; i < records.size(); ++i)
      if (records[i].split == s) out.push_back(static_cast<int>(i));
    return out;
  }

  const TaskDescriptor& task(const std::string& name) const {
    for (const auto& t : tasks)
      if (t.name == name) return t;
    throw config_error("task not found in manifest: " + name);
  }

  /// Split integrity: each patient in exactly one split; patient-count
  /// fractions within +-2% of the targets (plus one-patient granularity);
  /// every configured task label present and finite on every record.
  void validate() const {
    if (unit != "seconds" && unit != "days")
      throw data_error("unit must be 'seconds' or 'days'");
    std::map<std::string, Split> patient_split;
    std::array<std::set<std::string>, 3> patients_by_split;
    for (const auto& r : records) {
      r.validate();
      auto it = patient_split.find(r.patient_id);
      if (it == patient_split.end())
        patient_split.emplace(r.patient_id, r.split);
      else if (it->second != r.split)
        throw data_error("patient " + r.patient_id + " appears in two splits");
      patients_by_split[static_cast<int>(r.split)].insert(r.patient_id);
      for (const auto& t : tasks) {
        auto lit = r.labels.find(t.name);
        if (lit == r.labels.end())
          throw data_error(r.sequence_id + ": missing label " + t.name);
        if (!std::isfinite(lit->second))
          throw data_error(r.sequence_id + ": label " + t.name + " not finite");
      }
    }
    const double total = static_cast<double>(patient_split.size());
    if (total > 0) {
      const double slack = 0.02 + 1.0 / total;
      for (int s = 0; s < 3; ++s) {
        double frac = patients_by_split[s].size() / total;
        if (std::abs(frac - split_fractions[s]) > slack)
          throw data_error("split fraction for " + to_string(static_cast<Split>(s)) +
                           " is " + std::to_string(frac) + ", outside tolerance");
      }
    }
  }
};

// ---------------------------------------------------------------------------
// On-disk format
//
// root/index.json          {unit, tasks:[{name,kind}], sequences:[dirs]}
// root/<seq>/meta.json     {sequence_id, patient_id, timestamps, unit, labels, split}
// root/<seq>/frame_%04d.png

inline void save_dataset(const DatasetManifest& m, const std::string& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  nlohmann::json index;
  index["unit"] = m.unit;
  index["tasks"] = nlohmann::json::array();
  for (const auto& t : m.tasks)
    index["tasks"].push_back(
        {{"name", t.name},
         {"kind", t.kind == TaskKind::kClassification ? "classification" : "regression"}});
  index["sequences"] = nlohmann::json::array();
  for (const auto& r : m.records) {
    index["sequences"].push_back(r.sequence_id);
    fs::path dir = fs::path(root) / r.sequence_id;
    fs::create_directories(dir);
    nlohmann::json meta;
    meta["sequence_id"] = r.sequence_id;
    meta["patient_id"] = r.patient_id;
    meta["timestamps"] = r.timestamps;
    meta["unit"] = m.unit;
    meta["labels"] = r.labels;
    meta["split"] = to_string(r.split);
    std::ofstream mf(dir / "meta.json");
    if (!mf) throw io_error("cannot write " + (dir / "meta.json").string());
    mf << meta.dump(2) << "\n";
    char name[32];
    for (size_t f = 0; f < r.frames.size(); ++f) {
      std::snprintf(name, sizeof(name), "frame_%04zu.png", f);
      io::write_png_gray8((dir / name).string(), r.frames[f]);
    }
  }
  std::ofstream idx(fs::path(root) / "index.json");
  if (!idx) throw io_error("cannot write index.json under " + root);
  idx << index.dump(2) << "\n";
}

inline DatasetManifest load_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  fs::path index_path = fs::path(root) / "index.json";
  std::ifstream idx(index_path);
  if (!idx) throw io_error("cannot open " + index_path.string());
  nlohmann::json index = nlohmann::json::parse(idx);
  DatasetManifest m;
  m.unit = index.at("unit").get<std::string>();
  for (const auto& t : index.at("tasks")) {
    TaskDescriptor td;
    td.name = t.at("name").get<std::string>();
    std::string kind = t.at("kind").get<std::string>();
    if (kind == "classification")
      td.kind = TaskKind::kClassification;
    else if (kind == "regression")
      td.kind = TaskKind::kRegression;
    else
      throw data_error("unknown task kind: " + kind);
    m.tasks.push_back(td);
  }
  for (const auto& s : index.at("sequences")) {
    fs::path dir = fs::path(root) / s.get<std::string>();
    std::ifstream mf(dir / "meta.json");
    if (!mf) throw io_error("cannot open " + (dir / "meta.json").string());
    nlohmann::json meta = nlohmann::json::parse(mf);
    SequenceRecord r;
    r.sequence_id = meta.at("sequence_id").get<std::string>();
    r.patient_id = meta.at("patient_id").get<std::string>();
    r.timestamps = meta.at("timestamps").get<std::vector<double>>();
    r.labels = meta.at("labels").get<std::map<std::string, double>>();
    r.split = split_from_string(meta.at("split").get<std::string>());
    char name[32];
    for (size_t f = 0; f < r.timestamps.size(); ++f) {
      std::snprintf(name, sizeof(name), "frame_%04zu.png", f);
      r.frames.push_back(io::read_png_gray8((dir / name).string()));
    }
    r.validate();
    m.records.push_back(std::move(r));
  }
  return m;
}

}  // namespace tvrl
