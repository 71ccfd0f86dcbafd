#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>

#include "tvrl/checkpoint.hpp"
#include "tvrl/data/clips.hpp"
#include "tvrl/training.hpp"

namespace tvrl {

// ---------------------------------------------------------------------------
// Metrics

/// Area under the ROC curve via the rank formulation; ties contribute 1/2.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw contract_error("auc: scores/labels length mismatch");
  const int n = static_cast<int>(scores.size());
  int npos = 0;
  for (int l : labels) npos += l ? 1 : 0;
  const int nneg = n - npos;
  if (npos == 0 || nneg == 0)
    throw metric_error("auc: undefined with a single class");
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](int a, int b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    double avg = (i + j) / 2.0 + 1.0;  // average 1-based rank of the tie group
    for (int k = i; k <= j; ++k) rank[idx[k]] = avg;
    i = j + 1;
  }
  double pos_rank_sum = 0;
  for (int k = 0; k < n; ++k)
    if (labels[k]) pos_rank_sum += rank[k];
  return (pos_rank_sum - npos * (npos + 1.0) / 2.0) /
         (static_cast<double>(npos) * nneg);
}

inline double mae(const std::vector<double>& predictions,
                  const std::vector<double>& targets) {
  if (predictions.size() != targets.size())
    throw contract_error("mae: length mismatch");
  if (predictions.empty()) throw contract_error("mae: empty input");
  double acc = 0;
  for (size_t i = 0; i < predictions.size(); ++i)
    acc += std::abs(predictions[i] - targets[i]);
  return acc / static_cast<double>(predictions.size());
}

/// Start indices of 50%-overlapping windows covering a sequence. A final
/// window anchored at T-L is appended when T is off the stride grid, so every
/// frame belongs to at least one window; T <= L yields the single (padded)
/// window at 0.
inline std::vector<int> sliding_windows(int sequence_length, int window = 8) {
  if (sequence_length < 1) throw contract_error("sliding_windows: empty sequence");
  if (window < 2) throw contract_error("sliding_windows: window must be >= 2");
  if (sequence_length <= window) return {0};
  std::vector<int> starts;
  const int stride = window / 2;
  for (int s = 0; s + window <= sequence_length; s += stride) starts.push_back(s);
  if (starts.back() + window < sequence_length)
    starts.push_back(sequence_length - window);
  return starts;
}

// ---------------------------------------------------------------------------
// Linear probing

struct ProbeConfig {
  std::string task;
  double fraction = 1.0;
  int epochs = 100;
  double lr = 1e-3;
  int batch_size = 256;
  double weight_decay = 0.0;
  std::vector<uint64_t> seeds = {0, 1, 2, 3, 4};

  void validate() const {
    if (task.empty()) throw config_error("probe: task name required");
    if (!(fraction > 0.0) || fraction > 1.0)
      throw config_error("probe: fraction must lie in (0, 1]");
    if (epochs < 1 || batch_size < 1) throw config_error("probe: epochs/batch_size >= 1");
    if (!(lr > 0)) throw config_error("probe: lr must be > 0");
    if (seeds.empty()) throw config_error("probe: at least one seed");
  }
};

inline void to_json(nlohmann::json& j, const ProbeConfig& c) {
  j = nlohmann::json{{"task", c.task},         {"fraction", c.fraction},
                     {"epochs", c.epochs},     {"lr", c.lr},
                     {"batch_size", c.batch_size}, {"weight_decay", c.weight_decay},
                     {"seeds", c.seeds}};
}

inline void from_json(const nlohmann::json& j, ProbeConfig& c) {
  ProbeConfig d;
  c.task = j.value("task", d.task);
  c.fraction = j.value("fraction", d.fraction);
  c.epochs = j.value("epochs", d.epochs);
  c.lr = j.value("lr", d.lr);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.seeds = j.value("seeds", d.seeds);
}

/// The only trainable state of a probe: a fresh CLS token for the temporal
/// encoder and a single linear layer on its output. Regression targets are
/// standardized with probe-train statistics; predictions are mapped back.
template <class T>
struct ProbeHead {
  nn::ParamStore<T> store;
  ag::Param<T>* cls;
  ag::Param<T>* w;
  ag::Param<T>* b;
  TaskKind kind = TaskKind::kRegression;
  double target_mean = 0.0;
  double target_std = 1.0;

  ProbeHead(int dim, uint64_t seed) : store(seed) {
    cls = &store.add("probe.cls", 1, dim, nn::Init::kNormal002, true);
    w = &store.add("probe.w", 1, dim, nn::Init::kNormal002);
    b = &store.add("probe.b", 1, 1, nn::Init::kZeros, true);
  }
};

/// Frozen per-frame features of whole records (probing never augments, so
/// the spatial pass is computed once per record and reused).
template <class T>
class FeatureCache {
 public:
  const Mat<T>& get(Model<T>& model, const SequenceRecord& rec, int rec_idx) {
    auto it = cache_.find(rec_idx);
    if (it != cache_.end()) return it->second;
    std::vector<Mat<float>> frames;
    frames.reserve(rec.frames.size());
    for (const auto& f : rec.frames) frames.push_back(to_float(f));
    ag::Tape<T> tape(false);
    Mat<T> patches = model.patchify(frames);
    ag::Var<T> z = model.spatial_forward(tape, patches, static_cast<int>(frames.size()));
    return cache_.emplace(rec_idx, z->value).first->second;
  }

 private:
  std::map<int, Mat<T>> cache_;
};

namespace detail {

/// Consecutive-frame window [start, start+cap) of a record as a clip layout
/// over cached features; returns row indices plus relative times.
struct WindowSpec {
  std::vector<int> feature_rows;
  std::vector<double> rel_times;
  int valid = 0;
};

inline WindowSpec window_spec(const SequenceRecord& rec, int start, int cap) {
  WindowSpec w;
  const int t = rec.length();
  for (int k = 0; k < cap && start + k < t; ++k) {
    w.feature_rows.push_back(start + k);
    w.rel_times.push_back(rec.timestamps[start + k] - rec.timestamps[start]);
  }
  w.valid = static_cast<int>(w.feature_rows.size());
  return w;
}

/// Probe-time clip start: same start distribution as pretraining sampling;
/// only the start index is needed because frame features are cached.
inline std::pair<ClipPolicy, int> probe_clip_start(const SequenceRecord& rec,
                                                   ClipPolicy policy, int cap,
                                                   Rng& rng) {
  return sample_clip_start(rec, policy, cap, rng);
}

/// Forward a batch of windows through the frozen temporal encoder with the
/// probe CLS and linear head. Returns the logits var (B x 1).
template <class T>
ag::Var<T> probe_logits(ag::Tape<T>& tape, Model<T>& model, ProbeHead<T>& head,
                        const Mat<T>& stacked_tokens,
                        const std::vector<ag::ClipLayout>& layouts,
                        const std::vector<double>& stacked_times) {
  ag::Var<T> tokens = tape.constant(stacked_tokens);
  ag::Var<T> te = nullptr;
  if (model.config().use_time_embedding) te = model.te_forward(tape, stacked_times);
  ag::Var<T> full = model.temporal_forward(tape, tokens, layouts,
                                           tape.param(*head.cls), te);
  std::vector<int> cls_rows(layouts.size());
  for (size_t c = 0; c < layouts.size(); ++c)
    cls_rows[c] = static_cast<int>(c) * (model.config().clip_capacity + 1);
  ag::Var<T> cls = ag::gather_rows(tape, full, cls_rows);
  return ag::linear(tape, cls, tape.param(*head.w), tape.param(*head.b));
}

}  // namespace detail

/// Mean of per-window predictions over 50%-overlap sliding windows:
/// post-sigmoid scores for classification, raw (de-standardized) outputs for
/// regression.
template <class T>
double predict_sequence(Model<T>& model, ProbeHead<T>& head,
                        const SequenceRecord& rec, FeatureCache<T>* cache = nullptr,
                        int rec_idx = -1) {
  const int cap = model.config().clip_capacity;
  std::vector<int> starts = sliding_windows(rec.length(), cap);
  FeatureCache<T> local;
  FeatureCache<T>& fc = cache ? *cache : local;
  const Mat<T>& feats = fc.get(model, rec, rec_idx);

  Mat<T> stacked(0, feats.cols());
  std::vector<ag::ClipLayout> layouts;
  std::vector<double> times;
  int base = 0;
  for (int s : starts) {
    detail::WindowSpec w = detail::window_spec(rec, s, cap);
    Mat<T> grown(base + w.valid, feats.cols());
    if (base > 0) grown.topRows(base) = stacked;
    for (int k = 0; k < w.valid; ++k)
      grown.row(base + k) = feats.row(w.feature_rows[k]);
    stacked = std::move(grown);
    ag::ClipLayout l;
    l.token_base = base;
    l.valid = w.valid;
    layouts.push_back(l);
    for (double tv : w.rel_times) times.push_back(tv);
    base += w.valid;
  }
  ag::Tape<T> tape(false);
  ag::Var<T> logits = detail::probe_logits(tape, model, head, stacked, layouts, times);
  double acc = 0;
  for (int i = 0; i < logits->value.rows(); ++i) {
    double z = logits->value(i, 0);
    if (head.kind == TaskKind::kClassification)
      acc += 1.0 / (1.0 + std::exp(-z));
    else
      acc += z * head.target_std + head.target_mean;
  }
  return acc / static_cast<double>(starts.size());
}

/// Evaluate a trained head on a whole split; returns the task metric
/// (AUC in [0,1] for classification, MAE for regression).
template <class T>
double evaluate_split(Model<T>& model, ProbeHead<T>& head, const DatasetManifest& data,
                      Split split, const std::string& task, FeatureCache<T>& cache) {
  std::vector<double> preds, targets_d;
  std::vector<int> targets_i;
  for (int idx : data.split_indices(split)) {
    const SequenceRecord& rec = data.records[idx];
    double p = predict_sequence(model, head, rec, &cache, idx);
    preds.push_back(p);
    double y = rec.labels.at(task);
    targets_d.push_back(y);
    targets_i.push_back(y > 0.5 ? 1 : 0);
  }
  if (head.kind == TaskKind::kClassification) return auc(preds, targets_i);
  return mae(preds, targets_d);
}

struct ProbeSeedResult {
  uint64_t seed = 0;
  double val_metric = 0;
  double test_metric = 0;
  int best_epoch = -1;
};

/// Patient-level, seed-deterministic subsample of the train split.
inline std::vector<int> subsample_train_patients(const DatasetManifest& data,
                                                 double fraction, uint64_t seed) {
  std::vector<int> train = data.split_indices(Split::kTrain);
  std::vector<std::string> patients;
  std::map<std::string, std::vector<int>> by_patient;
  for (int idx : train) {
    auto& v = by_patient[data.records[idx].patient_id];
    if (v.empty()) patients.push_back(data.records[idx].patient_id);
    v.push_back(idx);
  }
  if (fraction >= 1.0) return train;
  Rng rng = Rng(seed).derive("subsample");
  std::vector<int> order = rng.permutation(static_cast<int>(patients.size()));
  int keep = std::max(
      1, static_cast<int>(std::llround(fraction * static_cast<double>(patients.size()))));
  std::vector<int> out;
  for (int i = 0; i < keep; ++i)
    for (int idx : by_patient[patients[order[i]]]) out.push_back(idx);
  std::sort(out.begin(), out.end());
  return out;
}

/// Train a probe head for one seed on a frozen backbone. The backbone is
/// bitwise untouched: only the fresh CLS token and the linear layer learn.
/// Returns the head at the best validation epoch plus its metrics.
template <class T>
std::pair<ProbeHead<T>, ProbeSeedResult> linear_probe(Model<T>& model,
                                                      const DatasetManifest& data,
                                                      const ProbeConfig& cfg,
                                                      uint64_t seed,
                                                      FeatureCache<T>* shared_cache = nullptr) {
  cfg.validate();
  const TaskDescriptor& task = data.task(cfg.task);  // config_error if missing
  if (!data.records.empty() &&
      data.records[0].frames[0].height != model.config().image_size)
    throw config_error("probe: dataset geometry does not match checkpoint config");

  // freeze everything in the backbone for the duration of the probe
  std::vector<bool> saved;
  for (auto* p : model.params().all()) {
    saved.push_back(p->trainable);
    p->trainable = false;
  }

  ProbeHead<T> head(model.config().hidden_dim, seed ^ 0x9e3779b9);
  head.kind = task.kind;
  FeatureCache<T> local_cache;
  FeatureCache<T>& cache = shared_cache ? *shared_cache : local_cache;

  std::vector<int> probe_train = subsample_train_patients(data, cfg.fraction, seed);
  if (probe_train.empty()) throw config_error("probe: empty train subset");

  if (task.kind == TaskKind::kRegression) {
    double mean = 0, var = 0;
    for (int idx : probe_train) mean += data.records[idx].labels.at(cfg.task);
    mean /= static_cast<double>(probe_train.size());
    for (int idx : probe_train) {
      double d = data.records[idx].labels.at(cfg.task) - mean;
      var += d * d;
    }
    head.target_mean = mean;
    head.target_std = probe_train.size() > 1
                          ? std::sqrt(var / static_cast<double>(probe_train.size() - 1))
                          : 1.0;
    if (head.target_std < 1e-12) head.target_std = 1.0;
  }

  AdamW<T> opt(head.store.all(), cfg.weight_decay);
  const ClipPolicy policy =
      data.unit == "seconds" ? ClipPolicy::kDenseStride2 : ClipPolicy::kSuccessive;
  const int cap = model.config().clip_capacity;

  ProbeSeedResult result;
  result.seed = seed;
  const bool higher_better = task.kind == TaskKind::kClassification;
  double best = higher_better ? -1e300 : 1e300;
  std::vector<Mat<T>> best_params;

  Rng probe_rng = Rng(seed).derive("probe", fnv1a64(cfg.task));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng = probe_rng.derive("epoch", static_cast<uint64_t>(epoch));
    std::vector<int> order =
        epoch_rng.permutation(static_cast<int>(probe_train.size()));
    for (size_t c = 0; c < order.size(); c += cfg.batch_size) {
      size_t end = std::min(order.size(), c + cfg.batch_size);
      Mat<T> stacked(0, model.config().hidden_dim);
      std::vector<ag::ClipLayout> layouts;
      std::vector<double> times;
      Mat<T> targets(static_cast<int>(end - c), 1);
      int base = 0;
      for (size_t k = c; k < end; ++k) {
        int rec_idx = probe_train[order[k]];
        const SequenceRecord& rec = data.records[rec_idx];
        const Mat<T>& feats = cache.get(model, rec, rec_idx);
        // sample a training clip start with the dataset policy (no augmentation)
        Rng item_rng = epoch_rng.derive(static_cast<uint64_t>(c),
                                        static_cast<uint64_t>(k - c));
        auto [eff, start] = detail::probe_clip_start(rec, policy, cap, item_rng);
        const int stride = eff == ClipPolicy::kDenseStride2 ? 2 : 1;
        ag::ClipLayout l;
        l.token_base = base;
        std::vector<int> rows;
        for (int j = 0; j < cap && start + j * stride < rec.length(); ++j)
          rows.push_back(start + j * stride);
        l.valid = static_cast<int>(rows.size());
        Mat<T> grown(base + l.valid, stacked.cols());
        if (base > 0) grown.topRows(base) = stacked;
        for (int j = 0; j < l.valid; ++j) grown.row(base + j) = feats.row(rows[j]);
        stacked = std::move(grown);
        for (int j = 0; j < l.valid; ++j)
          times.push_back(rec.timestamps[rows[j]] - rec.timestamps[rows[0]]);
        base += l.valid;
        layouts.push_back(l);
        double y = rec.labels.at(cfg.task);
        targets(static_cast<int>(k - c), 0) =
            task.kind == TaskKind::kRegression
                ? static_cast<T>((y - head.target_mean) / head.target_std)
                : static_cast<T>(y > 0.5 ? 1.0 : 0.0);
      }
      ag::Tape<T> tape;
      ag::Var<T> logits =
          detail::probe_logits(tape, model, head, stacked, layouts, times);
      ag::Var<T> loss = task.kind == TaskKind::kClassification
                            ? ag::bce_with_logits(tape, logits, targets)
                            : ag::mse_loss(tape, logits, targets);
      tape.backward(loss);
      opt.step(cfg.lr);
    }
    double val = evaluate_split(model, head, data, Split::kVal, cfg.task, cache);
    if ((higher_better && val > best) || (!higher_better && val < best)) {
      best = val;
      result.best_epoch = epoch;
      best_params.clear();
      for (auto* p : head.store.all()) best_params.push_back(p->value);
    }
  }
  auto heads = head.store.all();
  for (size_t i = 0; i < heads.size(); ++i) heads[i]->value = best_params[i];
  result.val_metric = best;
  result.test_metric = evaluate_split(model, head, data, Split::kTest, cfg.task, cache);

  for (size_t i = 0; i < saved.size(); ++i)
    model.params().all()[i]->trainable = saved[i];
  return {std::move(head), result};
}

// ---------------------------------------------------------------------------
// Multi-seed benchmark

struct BenchmarkEntry {
  std::string strategy;
  std::string task;
  double fraction = 1.0;
  std::string metric;  // "auc_percent" | "mae"
  std::vector<ProbeSeedResult> per_seed;
  double mean = 0;
  double stddev = 0;
};

inline void finalize_entry(BenchmarkEntry& e) {
  double m = 0;
  for (const auto& r : e.per_seed)
    m += e.metric == "auc_percent" ? 100.0 * r.test_metric : r.test_metric;
  m /= static_cast<double>(e.per_seed.size());
  double var = 0;
  for (const auto& r : e.per_seed) {
    double v = e.metric == "auc_percent" ? 100.0 * r.test_metric : r.test_metric;
    var += (v - m) * (v - m);
  }
  e.mean = m;
  e.stddev = e.per_seed.size() > 1
                 ? std::sqrt(var / static_cast<double>(e.per_seed.size() - 1))
                 : 0.0;
}

/// Probe one (task, fraction) over every seed in the config.
template <class T>
BenchmarkEntry run_probe(Model<T>& model, const DatasetManifest& data,
                         const ProbeConfig& cfg, const std::string& strategy_name) {
  BenchmarkEntry e;
  e.strategy = strategy_name;
  e.task = cfg.task;
  e.fraction = cfg.fraction;
  e.metric = data.task(cfg.task).kind == TaskKind::kClassification ? "auc_percent"
                                                                   : "mae";
  FeatureCache<T> cache;  // frozen features shared across seeds
  for (uint64_t seed : cfg.seeds) {
    auto [head, result] = linear_probe(model, data, cfg, seed, &cache);
    e.per_seed.push_back(result);
  }
  finalize_entry(e);
  return e;
}

struct BenchmarkReport {
  std::vector<BenchmarkEntry> entries;
};

inline void to_json(nlohmann::json& j, const BenchmarkReport& r) {
  j["entries"] = nlohmann::json::array();
  for (const auto& e : r.entries) {
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& s : e.per_seed)
      seeds.push_back({{"seed", s.seed},
                       {"val_metric", s.val_metric},
                       {"test_metric", s.test_metric},
                       {"best_epoch", s.best_epoch}});
    j["entries"].push_back({{"strategy", e.strategy},
                            {"task", e.task},
                            {"fraction", e.fraction},
                            {"metric", e.metric},
                            {"per_seed", seeds},
                            {"mean", e.mean},
                            {"std", e.stddev}});
  }
}

/// Aligned text table: strategy rows x (task, fraction) columns, mean+-std
/// cells, mirroring the usual benchmark layout.
inline std::string format_table(const BenchmarkReport& report) {
  std::vector<std::string> strategies;
  std::vector<std::pair<std::string, double>> columns;
  auto find = [](auto& v, const auto& x) {
    return std::find(v.begin(), v.end(), x) != v.end();
  };
  for (const auto& e : report.entries) {
    if (!find(strategies, e.strategy)) strategies.push_back(e.strategy);
    std::pair<std::string, double> col{e.task, e.fraction};
    if (std::find(columns.begin(), columns.end(), col) == columns.end())
      columns.push_back(col);
  }
  auto cell = [&](const std::string& strat, const auto& col) -> std::string {
    for (const auto& e : report.entries)
      if (e.strategy == strat && e.task == col.first && e.fraction == col.second) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.2f+-%.2f", e.mean, e.stddev);
        return buf;
      }
    return "-";
  };
  std::vector<std::string> headers = {"strategy"};
  for (const auto& c : columns) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s@%g%%", c.first.c_str(), 100.0 * c.second);
    headers.push_back(buf);
  }
  std::vector<size_t> width(headers.size());
  for (size_t i = 0; i < headers.size(); ++i) width[i] = headers[i].size();
  for (const auto& s : strategies) {
    width[0] = std::max(width[0], s.size());
    for (size_t c = 0; c < columns.size(); ++c)
      width[c + 1] = std::max(width[c + 1], cell(s, columns[c]).size());
  }
  std::ostringstream os;
  auto pad = [&](const std::string& s, size_t w) {
    os << s << std::string(w - s.size() + 2, ' ');
  };
  for (size_t i = 0; i < headers.size(); ++i) pad(headers[i], width[i]);
  os << "\n";
  for (const auto& s : strategies) {
    pad(s, width[0]);
    for (size_t c = 0; c < columns.size(); ++c) pad(cell(s, columns[c]), width[c + 1]);
    os << "\n";
  }
  return os.str();
}

}  // namespace tvrl
