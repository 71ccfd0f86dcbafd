#pragma once

#include <filesystem>
#include <fstream>

#include "tvrl/checkpoint.hpp"
#include "tvrl/data/augment.hpp"
#include "tvrl/data/clips.hpp"

namespace tvrl {

/// Pretraining strategies. csimclr contrasts two augmented views of a single
/// clip; csimclr-te adds time embedding; tvrl adds masked latent-feature
/// prediction (no TE); multiclip is the time-invariant control contrasting
/// two temporally distinct clips.
enum class Strategy { kCSimclr, kCSimclrTe, kTvrl, kMulticlip };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kCSimclr: return "csimclr";
    case Strategy::kCSimclrTe: return "csimclr-te";
    case Strategy::kTvrl: return "tvrl";
    case Strategy::kMulticlip: return "multiclip";
  }
  throw contract_error("bad strategy value");
}

inline Strategy strategy_from_string(const std::string& s) {
  if (s == "csimclr") return Strategy::kCSimclr;
  if (s == "csimclr-te") return Strategy::kCSimclrTe;
  if (s == "tvrl") return Strategy::kTvrl;
  if (s == "multiclip") return Strategy::kMulticlip;
  throw config_error("unknown strategy: " + s);
}

struct PretrainConfig {
  Strategy strategy = Strategy::kCSimclr;
  int epochs = 200;
  int batch_size = 256;
  double base_lr = 2e-4;
  int warmup_epochs = 20;
  double weight_decay = 0.05;
  uint64_t seed = 0;
  int save_interval = 20;
  std::string clip_policy = "auto";  // auto: by dataset unit
  bool tvrl_contrastive_from_unmasked = false;
  LossConfig loss;
  EncoderConfig encoder;
  AugConfig augment;

  void validate() const {
    encoder.validate();
    loss.validate();
    augment.validate();
    if (epochs < 0) throw config_error("pretrain: epochs must be >= 0");
    if (batch_size < 2) throw config_error("pretrain: batch_size must be >= 2");
    if (!(base_lr > 0)) throw config_error("pretrain: base_lr must be > 0");
    if (warmup_epochs < 0 || warmup_epochs > epochs)
      throw config_error("pretrain: warmup_epochs must lie in [0, epochs]");
    if (save_interval < 1) throw config_error("pretrain: save_interval must be >= 1");
    const bool te = encoder.use_time_embedding;
    if (strategy == Strategy::kCSimclrTe && !te)
      throw config_error("strategy csimclr-te requires encoder.use_time_embedding=true");
    if (strategy != Strategy::kCSimclrTe && te)
      throw config_error("strategy " + to_string(strategy) +
                         " must not enable time embedding");
    if (strategy == Strategy::kTvrl && !encoder.use_mask_token)
      throw config_error("strategy tvrl requires encoder.use_mask_token=true");
    if (clip_policy != "auto" && clip_policy != "dense-stride-2" &&
        clip_policy != "successive")
      throw config_error("pretrain: unknown clip policy " + clip_policy);
  }
};

inline void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = nlohmann::json{{"strategy", to_string(c.strategy)},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"base_lr", c.base_lr},
                     {"warmup_epochs", c.warmup_epochs},
                     {"weight_decay", c.weight_decay},
                     {"seed", c.seed},
                     {"save_interval", c.save_interval},
                     {"clip_policy", c.clip_policy},
                     {"tvrl_contrastive_from_unmasked", c.tvrl_contrastive_from_unmasked},
                     {"loss", c.loss},
                     {"encoder", c.encoder},
                     {"augment", c.augment}};
}

inline void from_json(const nlohmann::json& j, PretrainConfig& c) {
  PretrainConfig d;
  c.strategy = strategy_from_string(j.value("strategy", to_string(d.strategy)));
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.base_lr = j.value("base_lr", d.base_lr);
  c.warmup_epochs = j.value("warmup_epochs", d.warmup_epochs);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.seed = j.value("seed", d.seed);
  c.save_interval = j.value("save_interval", d.save_interval);
  c.clip_policy = j.value("clip_policy", d.clip_policy);
  c.tvrl_contrastive_from_unmasked =
      j.value("tvrl_contrastive_from_unmasked", d.tvrl_contrastive_from_unmasked);
  if (j.contains("loss")) c.loss = j.at("loss").get<LossConfig>();
  if (j.contains("encoder")) c.encoder = j.at("encoder").get<EncoderConfig>();
  if (j.contains("augment")) c.augment = j.at("augment").get<AugConfig>();
}

/// Cosine-annealed learning rate with linear warmup: 0 at step 0, base_lr at
/// the end of warmup, base_lr/2 at the cosine midpoint, 0 at total_steps.
inline double lr_at(int64_t step, int64_t total_steps, const PretrainConfig& cfg) {
  if (step < 0 || step > total_steps)
    throw contract_error("lr_at: step outside [0, total_steps]");
  if (total_steps == 0) return 0.0;
  const int64_t warmup =
      cfg.epochs > 0
          ? static_cast<int64_t>(std::llround(
                static_cast<double>(total_steps) * cfg.warmup_epochs / cfg.epochs))
          : 0;
  if (step < warmup) return cfg.base_lr * static_cast<double>(step) / warmup;
  if (total_steps == warmup) return step < total_steps ? cfg.base_lr : 0.0;
  double progress = static_cast<double>(step - warmup) / (total_steps - warmup);
  return cfg.base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

/// Decoupled-weight-decay Adam over a fixed parameter set.
template <class T>
class AdamW {
 public:
  AdamW(std::vector<ag::Param<T>*> params, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)),
        wd_(weight_decay),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
  }

  /// Apply one update from the accumulated gradients, then clear them.
  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      ag::Param<T>* p = params_[i];
      if (!p->trainable || !p->grad.size()) continue;
      if (!m_[i].size()) {
        m_[i].setZero(p->value.rows(), p->value.cols());
        v_[i].setZero(p->value.rows(), p->value.cols());
      }
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p->grad;
      v_[i] = (beta2_ * v_[i].array() + (1.0 - beta2_) * p->grad.array().square()).matrix();
      auto mhat = m_[i].array() / static_cast<T>(bc1);
      auto vhat = v_[i].array() / static_cast<T>(bc2);
      p->value.array() -= static_cast<T>(lr) * (mhat / (vhat.sqrt() + static_cast<T>(eps_)));
      if (!p->no_decay && wd_ != 0.0)
        p->value.array() -= static_cast<T>(lr * wd_) * p->value.array();
      p->grad.setZero();
    }
  }

 private:
  std::vector<ag::Param<T>*> params_;
  double wd_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Mat<T>> m_, v_;
};

template <class T>
struct StepOutput {
  double total = 0;
  double contrastive = 0;
  double reconstruction = 0;
};

/// Owns the model, projection heads and optimizer state for one pretraining
/// run and implements the per-strategy step.
template <class T = float>
class Pretrainer {
 public:
  Pretrainer(const PretrainConfig& cfg, const DatasetManifest& data)
      : cfg_(cfg),
        data_(&data),
        model_(cfg.encoder, cfg.seed),
        head_p_("head_p", cfg.encoder.hidden_dim, cfg.encoder.hidden_dim,
                cfg.loss.projection_dim, cfg.seed ^ 0x1111),
        head_q_("head_q", cfg.encoder.hidden_dim, cfg.encoder.hidden_dim,
                cfg.encoder.hidden_dim, cfg.seed ^ 0x2222) {
    cfg.validate();
    policy_ = resolve_policy(cfg, data);
    std::vector<ag::Param<T>*> all = model_.params().all();
    for (auto* p : head_p_.params().all()) all.push_back(p);
    if (cfg.strategy == Strategy::kTvrl)
      for (auto* p : head_q_.params().all()) all.push_back(p);
    opt_ = std::make_unique<AdamW<T>>(std::move(all), cfg.weight_decay);
  }

  static ClipPolicy resolve_policy(const PretrainConfig& cfg,
                                   const DatasetManifest& data) {
    if (cfg.clip_policy == "dense-stride-2") return ClipPolicy::kDenseStride2;
    if (cfg.clip_policy == "successive") return ClipPolicy::kSuccessive;
    return data.unit == "seconds" ? ClipPolicy::kDenseStride2
                                  : ClipPolicy::kSuccessive;
  }

  Model<T>& model() { return model_; }
  ProjectionHead<T>& head_p() { return head_p_; }
  ProjectionHead<T>& head_q() { return head_q_; }
  ClipPolicy policy() const { return policy_; }

  /// One strategy step over the records named by `batch` (indices into the
  /// manifest). Deterministic in (config seed, epoch, step_in_epoch).
  StepOutput<T> run_step(const std::vector<int>& batch, int epoch, int step_in_epoch,
                         double lr, bool update = true) {
    if (batch.size() < 2)
      throw contract_error("pretrain_step: degenerate contrastive batch (need >= 2)");
    const int n = static_cast<int>(batch.size());
    const int cap = cfg_.encoder.clip_capacity;

    // assemble the 2N view clips deterministically
    std::vector<Clip> views;
    views.reserve(2 * n);
    std::vector<MaskPlan> masks(2 * n);
    Rng epoch_rng = Rng(cfg_.seed).derive("data", static_cast<uint64_t>(epoch));
    for (int k = 0; k < n; ++k) {
      Rng item_rng = epoch_rng.derive(static_cast<uint64_t>(step_in_epoch),
                                      static_cast<uint64_t>(k));
      const SequenceRecord& rec = (*data_).records[batch[k]];
      if (cfg_.strategy == Strategy::kMulticlip) {
        auto [a, b] = sample_two_clips(rec, policy_, item_rng, cap);
        AugParams pa = sample_aug_params(cfg_.augment, cfg_.encoder.image_size, item_rng);
        AugParams pb = sample_aug_params(cfg_.augment, cfg_.encoder.image_size, item_rng);
        views.push_back(cfg_.augment.enabled ? augment_clip(a, pa) : a);
        views.push_back(cfg_.augment.enabled ? augment_clip(b, pb) : b);
      } else {
        Clip clip = sample_clip(rec, policy_, item_rng, cap);
        ViewPair vp = make_view_pair(clip, cfg_.augment, item_rng);
        views.push_back(std::move(vp.view_i));
        views.push_back(std::move(vp.view_j));
      }
      if (cfg_.strategy == Strategy::kTvrl) {
        masks[2 * k] = sample_mask_plan(views[2 * k].valid_count(),
                                        cfg_.loss.mask_ratio, item_rng);
        masks[2 * k + 1] = sample_mask_plan(views[2 * k + 1].valid_count(),
                                            cfg_.loss.mask_ratio, item_rng);
      }
    }

    // stack every valid frame for one spatial pass
    std::vector<Mat<float>> frames;
    std::vector<ag::ClipLayout> layouts(2 * n);
    std::vector<double> stacked_times;
    for (int v = 0; v < 2 * n; ++v) {
      layouts[v].token_base = static_cast<int>(frames.size());
      layouts[v].valid = views[v].valid_count();
      if (cfg_.strategy == Strategy::kTvrl) layouts[v].masked = masks[v].indices;
      for (int f = 0; f < layouts[v].valid; ++f) {
        frames.push_back(views[v].frames[f]);
        stacked_times.push_back(views[v].relative_times.values[f]);
      }
    }

    ag::Tape<T> tape;
    Mat<T> patches = model_.patchify(frames);
    ag::Var<T> zs =
        model_.spatial_forward(tape, patches, static_cast<int>(frames.size()));

    ag::Var<T> te = nullptr;
    if (cfg_.encoder.use_time_embedding) te = model_.te_forward(tape, stacked_times);

    ag::Var<T> full = model_.temporal_forward(tape, zs, layouts,
                                              model_.pretrain_cls(tape), te);
    const int s = cap + 1;

    // contrastive CLS rows (from the unmasked pass when the flag asks for it)
    std::vector<int> cls_rows(2 * n);
    for (int v = 0; v < 2 * n; ++v) cls_rows[v] = v * s;
    ag::Var<T> cls_source = full;
    if (cfg_.strategy == Strategy::kTvrl && cfg_.tvrl_contrastive_from_unmasked) {
      std::vector<ag::ClipLayout> unmasked = layouts;
      for (auto& l : unmasked) l.masked.clear();
      cls_source = model_.temporal_forward(tape, zs, unmasked,
                                           model_.pretrain_cls(tape), te);
    }
    ag::Var<T> cls = ag::gather_rows(tape, cls_source, cls_rows);
    ag::Var<T> projected = head_p_.forward(tape, cls);
    ag::Var<T> l_contrastive =
        ntxent_loss_graph(tape, projected, static_cast<T>(cfg_.loss.temperature));

    StepOutput<T> out;
    ag::Var<T> total = l_contrastive;
    if (cfg_.strategy == Strategy::kTvrl) {
      // reconstruct masked positions per view; average the two view losses
      ag::Var<T> l_masked = nullptr;
      for (int half = 0; half < 2; ++half) {
        std::vector<int> out_rows;
        std::vector<int> tok_rows;
        for (int v = half; v < 2 * n; v += 2)
          for (int idx : layouts[v].masked) {
            out_rows.push_back(v * s + 1 + idx);
            tok_rows.push_back(layouts[v].token_base + idx);
          }
        ag::Var<T> masked_out = ag::gather_rows(tape, full, out_rows);
        ag::Var<T> recon = head_q_.forward(tape, masked_out);
        Mat<T> targets(static_cast<int>(tok_rows.size()), cfg_.encoder.hidden_dim);
        for (size_t r = 0; r < tok_rows.size(); ++r)
          targets.row(static_cast<int>(r)) = zs->value.row(tok_rows[r]);
        ag::Var<T> lm = masked_prediction_loss_graph(tape, recon, targets);
        l_masked = l_masked ? ag::add(tape, l_masked, lm) : lm;
      }
      l_masked = ag::scale(tape, l_masked, T(0.5));
      out.reconstruction = l_masked->value(0, 0);
      total = tvrl_loss_graph(tape, l_contrastive, l_masked,
                              static_cast<T>(cfg_.loss.lambda_weight));
    }
    out.contrastive = l_contrastive->value(0, 0);
    out.total = total->value(0, 0);

    if (update) {
      tape.backward(total);
      opt_->step(lr);
    }
    return out;
  }

 private:
  PretrainConfig cfg_;
  const DatasetManifest* data_;
  Model<T> model_;
  ProjectionHead<T> head_p_, head_q_;
  std::unique_ptr<AdamW<T>> opt_;
  ClipPolicy policy_;
};

/// Full pretraining loop: shuffled patient-exclusive train split, cosine
/// schedule, newline-delimited metrics ({epoch, step, loss, lr}; step -1 rows
/// are per-epoch means), periodic checkpoints plus ckpt_final. Returns the
/// final checkpoint base path.
template <class T = float>
std::string pretrain(const PretrainConfig& cfg, const DatasetManifest& data,
                     const std::string& out_dir) {
  namespace fs = std::filesystem;
  cfg.validate();
  std::vector<int> train = data.split_indices(Split::kTrain);
  if (train.empty()) throw config_error("pretrain: train split is empty");
  fs::create_directories(out_dir);

  Pretrainer<T> trainer(cfg, data);
  const int n = static_cast<int>(train.size());
  std::vector<int> chunk_sizes;  // fixed across epochs; trailing chunk < 2 dropped
  for (int i = 0; i < n / cfg.batch_size; ++i) chunk_sizes.push_back(cfg.batch_size);
  if (n % cfg.batch_size >= 2) chunk_sizes.push_back(n % cfg.batch_size);
  if (chunk_sizes.empty())
    throw config_error("pretrain: train split smaller than a contrastive batch");
  const int64_t steps_per_epoch = static_cast<int64_t>(chunk_sizes.size());
  const int64_t total_steps = steps_per_epoch * cfg.epochs;

  std::ofstream metrics(fs::path(out_dir) / "metrics.ndjson");
  if (!metrics) throw io_error("cannot write metrics under " + out_dir);
  auto save = [&](const std::string& name, int epoch) {
    CheckpointMeta meta{cfg.encoder, cfg.loss, to_string(cfg.strategy), epoch, cfg.seed};
    std::vector<const nn::ParamStore<T>*> extras = {&trainer.head_p().params()};
    if (cfg.strategy == Strategy::kTvrl) extras.push_back(&trainer.head_q().params());
    save_checkpoint((fs::path(out_dir) / name).string(), trainer.model(), extras, meta);
  };

  int64_t global_step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng order_rng = Rng(cfg.seed).derive("order", static_cast<uint64_t>(epoch));
    std::vector<int> order = order_rng.permutation(n);
    double epoch_loss = 0;
    double last_lr = 0;
    int pos = 0;
    for (size_t c = 0; c < chunk_sizes.size(); ++c) {
      std::vector<int> batch;
      for (int k = 0; k < chunk_sizes[c]; ++k) batch.push_back(train[order[pos++]]);
      double lr = lr_at(global_step, total_steps, cfg);
      StepOutput<T> so = trainer.run_step(batch, epoch, static_cast<int>(c), lr);
      epoch_loss += so.total;
      last_lr = lr;
      nlohmann::json row = {{"epoch", epoch},
                            {"step", global_step},
                            {"loss", so.total},
                            {"lr", lr}};
      metrics << row.dump() << "\n";
      ++global_step;
    }
    nlohmann::json row = {{"epoch", epoch},
                          {"step", -1},
                          {"loss", epoch_loss / static_cast<double>(steps_per_epoch)},
                          {"lr", last_lr}};
    metrics << row.dump() << "\n";
    metrics.flush();
    if ((epoch + 1) % cfg.save_interval == 0 && epoch + 1 < cfg.epochs) {
      char name[32];
      std::snprintf(name, sizeof(name), "ckpt_epoch_%04d", epoch + 1);
      save(name, epoch + 1);
    }
  }
  save("ckpt_final", cfg.epochs);
  return (fs::path(out_dir) / "ckpt_final").string();
}

}  // namespace tvrl
