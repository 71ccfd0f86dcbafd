#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "loss_oracles.hpp"
#include "test_support.hpp"
#include "tvrl/data/synthetic.hpp"
#include "tvrl/training.hpp"

using namespace tvrl;
namespace fs = std::filesystem;

namespace {

EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.hidden_dim = 16;
  c.spatial_heads = 2;
  c.temporal_heads = 2;
  c.spatial_layers = 1;
  c.temporal_layers = 1;
  return c;
}

LongitudinalSynthConfig tiny_data_cfg() {
  LongitudinalSynthConfig c;
  c.image_size = 16;
  return c;
}

PretrainConfig tiny_pretrain(Strategy s) {
  PretrainConfig c;
  c.strategy = s;
  c.encoder = tiny_encoder();
  c.encoder.use_time_embedding = s == Strategy::kCSimclrTe;
  c.encoder.use_mask_token = s == Strategy::kTvrl;
  c.epochs = 2;
  c.batch_size = 8;
  c.warmup_epochs = 1;
  c.save_interval = 20;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("lr schedule") {
  PretrainConfig cfg;
  cfg.epochs = 200;
  cfg.warmup_epochs = 20;
  cfg.base_lr = 2e-4;
  const int64_t total = 2000;  // 10 steps/epoch
  const int64_t warmup = 200;
  CHECK(lr_at(0, total, cfg) == 0.0);
  CHECK(lr_at(warmup, total, cfg) == Catch::Approx(2e-4).margin(1e-9));
  // cosine midpoint
  int64_t mid = warmup + (total - warmup) / 2;
  CHECK(lr_at(mid, total, cfg) == Catch::Approx(1e-4).margin(1e-9));
  CHECK(lr_at(total, total, cfg) == Catch::Approx(0.0).margin(1e-9));
  CHECK_THROWS_AS(lr_at(total + 1, total, cfg), contract_error);
  CHECK_THROWS_AS(lr_at(-1, total, cfg), contract_error);
  // linearity of the ramp
  CHECK(lr_at(warmup / 2, total, cfg) == Catch::Approx(1e-4).margin(1e-12));
}

TEST_CASE("strategy / time-embedding coupling is enforced") {
  PretrainConfig cfg = tiny_pretrain(Strategy::kCSimclrTe);
  CHECK_NOTHROW(cfg.validate());
  cfg.encoder.use_time_embedding = false;
  CHECK_THROWS_AS(cfg.validate(), config_error);

  PretrainConfig c2 = tiny_pretrain(Strategy::kTvrl);
  CHECK_NOTHROW(c2.validate());
  c2.encoder.use_time_embedding = true;
  CHECK_THROWS_AS(c2.validate(), config_error);
  c2.encoder.use_time_embedding = false;
  c2.encoder.use_mask_token = false;
  CHECK_THROWS_AS(c2.validate(), config_error);

  PretrainConfig c3 = tiny_pretrain(Strategy::kMulticlip);
  CHECK_NOTHROW(c3.validate());
  c3.encoder.use_time_embedding = true;
  CHECK_THROWS_AS(c3.validate(), config_error);
}

TEST_CASE("pretrain_step contracts and strategy dispatch") {
  DatasetManifest data = generate_longitudinal_synthetic(24, tiny_data_cfg(), 3);
  std::vector<int> batch = {0, 1, 2, 3};

  SECTION("batch of one is a degenerate-contrastive error") {
    Pretrainer<float> tr(tiny_pretrain(Strategy::kCSimclr), data);
    CHECK_THROWS_AS(tr.run_step({0}, 0, 0, 1e-4), contract_error);
  }

  SECTION("tvrl with lambda=0 equals the contrastive loss of the masked pass") {
    PretrainConfig cfg = tiny_pretrain(Strategy::kTvrl);
    cfg.loss.lambda_weight = 0.0;
    Pretrainer<float> tr(cfg, data);
    auto out = tr.run_step(batch, 0, 0, 0.0, /*update=*/false);
    CHECK(out.total == out.contrastive);
    CHECK(out.reconstruction > 0.0);
  }

  SECTION("tvrl reports both components and trains") {
    PretrainConfig cfg = tiny_pretrain(Strategy::kTvrl);
    Pretrainer<float> tr(cfg, data);
    auto out = tr.run_step(batch, 0, 0, 1e-4);
    CHECK(out.total ==
          Catch::Approx(0.5 * out.contrastive + 0.5 * out.reconstruction).margin(1e-6));
  }

  SECTION("multiclip runs without mask token or TE") {
    Pretrainer<float> tr(tiny_pretrain(Strategy::kMulticlip), data);
    auto out = tr.run_step(batch, 0, 0, 1e-4);
    CHECK(std::isfinite(out.total));
    CHECK(out.reconstruction == 0.0);
  }

  SECTION("csimclr-te consumes irregular times") {
    Pretrainer<float> tr(tiny_pretrain(Strategy::kCSimclrTe), data);
    auto out = tr.run_step(batch, 0, 0, 1e-4);
    CHECK(std::isfinite(out.total));
  }
}

TEST_CASE("descent: one small AdamW step lowers the recomputed loss") {
  DatasetManifest data = generate_longitudinal_synthetic(16, tiny_data_cfg(), 7);
  PretrainConfig cfg = tiny_pretrain(Strategy::kCSimclr);
  Pretrainer<double> tr(cfg, data);
  std::vector<int> batch = {0, 1, 2, 3, 4, 5};
  auto before = tr.run_step(batch, 0, 0, 1e-5, /*update=*/true);
  auto after = tr.run_step(batch, 0, 0, 0.0, /*update=*/false);
  CHECK(after.total < before.total);
}

TEST_CASE("csimclr with identical views matches the ntxent oracle") {
  DatasetManifest data = generate_longitudinal_synthetic(12, tiny_data_cfg(), 9);
  PretrainConfig cfg = tiny_pretrain(Strategy::kCSimclr);
  cfg.augment.enabled = false;  // both views bitwise identical
  Pretrainer<float> tr(cfg, data);
  std::vector<int> batch = {0, 1, 2, 3, 4};
  auto out = tr.run_step(batch, 0, 0, 0.0, /*update=*/false);

  // independent path: pure single-clip encoding + head application + oracle
  Mat<double> projected(2 * batch.size(), cfg.loss.projection_dim);
  Rng epoch_rng = Rng(cfg.seed).derive("data", 0);
  for (size_t k = 0; k < batch.size(); ++k) {
    Rng item_rng = epoch_rng.derive(0, static_cast<uint64_t>(k));
    Clip clip = sample_clip(data.records[batch[k]], ClipPolicy::kSuccessive, item_rng);
    std::vector<Mat<float>> valid_frames(clip.frames.begin(),
                                         clip.frames.begin() + clip.valid_count());
    FrameTokens<float> ft = tr.model().encode_frames(valid_frames);
    auto seq = tr.model().encode_sequence(ft, std::nullopt, std::nullopt,
                                          ClsSelector::kPretrain);
    Mat<float> proj = tr.head_p().apply(seq.cls_embedding);
    projected.row(2 * k) = proj.row(0).cast<double>();
    projected.row(2 * k + 1) = proj.row(0).cast<double>();
  }
  double oracle = testing::ntxent_oracle(projected, cfg.loss.temperature);
  CHECK(out.contrastive == Catch::Approx(oracle).epsilon(1e-3));
}

TEST_CASE("pretrain loop artifacts and determinism") {
  DatasetManifest data = generate_longitudinal_synthetic(20, tiny_data_cfg(), 11);
  fs::path dir = fs::temp_directory_path() / "tvrl_train_test";
  fs::remove_all(dir);

  SECTION("epochs=0 leaves weights at random initialization") {
    PretrainConfig cfg = tiny_pretrain(Strategy::kCSimclr);
    cfg.epochs = 0;
    cfg.warmup_epochs = 0;
    std::string ckpt = pretrain<float>(cfg, data, (dir / "e0").string());
    auto loaded = load_checkpoint<float>(ckpt);
    Model<float> fresh(cfg.encoder, cfg.seed);
    auto fresh_params = fresh.params().all();
    auto loaded_params = loaded.model->params().all();
    REQUIRE(fresh_params.size() == loaded_params.size());
    for (size_t i = 0; i < fresh_params.size(); ++i)
      CHECK(fresh_params[i]->value == loaded_params[i]->value);
  }

  SECTION("same config and seed give byte-identical loss traces") {
    PretrainConfig cfg = tiny_pretrain(Strategy::kCSimclr);
    pretrain<float>(cfg, data, (dir / "a").string());
    pretrain<float>(cfg, data, (dir / "b").string());
    std::ifstream fa(dir / "a" / "metrics.ndjson"), fb(dir / "b" / "metrics.ndjson");
    std::string sa((std::istreambuf_iterator<char>(fa)), {});
    std::string sb((std::istreambuf_iterator<char>(fb)), {});
    CHECK(sa == sb);
    CHECK(!sa.empty());
  }

  SECTION("metrics rows carry {epoch, step, loss, lr}; epoch means use step=-1") {
    PretrainConfig cfg = tiny_pretrain(Strategy::kCSimclr);
    pretrain<float>(cfg, data, (dir / "m").string());
    std::ifstream f(dir / "m" / "metrics.ndjson");
    std::string line;
    int rows = 0, epoch_rows = 0;
    while (std::getline(f, line)) {
      nlohmann::json j = nlohmann::json::parse(line);
      REQUIRE(j.contains("epoch"));
      REQUIRE(j.contains("step"));
      REQUIRE(j.contains("loss"));
      REQUIRE(j.contains("lr"));
      if (j["step"].get<int>() == -1) ++epoch_rows;
      ++rows;
    }
    // 14 train sequences -> 1 chunk of 8 (+ rest 6) = 2 steps/epoch
    CHECK(epoch_rows == cfg.epochs);
    CHECK(rows > epoch_rows);
  }

  SECTION("empty train split is a configuration error") {
    DatasetManifest empty = data;
    for (auto& r : empty.records) r.split = Split::kTest;
    PretrainConfig cfg = tiny_pretrain(Strategy::kCSimclr);
    CHECK_THROWS_AS(pretrain<float>(cfg, empty, (dir / "x").string()), config_error);
  }
  fs::remove_all(dir);
}

TEST_CASE("five-epoch smoke run: smoothed loss trace is nonincreasing") {
  LongitudinalSynthConfig dcfg = tiny_data_cfg();
  DatasetManifest data = generate_longitudinal_synthetic(64, dcfg, 13);
  PretrainConfig cfg = tiny_pretrain(Strategy::kCSimclr);
  cfg.epochs = 5;
  cfg.warmup_epochs = 1;
  cfg.batch_size = 16;
  cfg.base_lr = 1e-3;
  fs::path dir = fs::temp_directory_path() / "tvrl_smoke_test";
  fs::remove_all(dir);
  pretrain<float>(cfg, data, dir.string());
  std::ifstream f(dir / "metrics.ndjson");
  std::string line;
  std::vector<double> epoch_means;
  while (std::getline(f, line)) {
    nlohmann::json j = nlohmann::json::parse(line);
    if (j["step"].get<int>() == -1) epoch_means.push_back(j["loss"].get<double>());
  }
  REQUIRE(epoch_means.size() == 5);
  std::vector<double> smooth;
  for (size_t i = 0; i + 3 <= epoch_means.size(); ++i)
    smooth.push_back((epoch_means[i] + epoch_means[i + 1] + epoch_means[i + 2]) / 3.0);
  for (size_t i = 1; i < smooth.size(); ++i) CHECK(smooth[i] <= smooth[i - 1]);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint round-trip reproduces outputs bitwise") {
  EncoderConfig cfg = tiny_encoder();
  cfg.use_mask_token = true;
  Model<float> model(cfg, 17);
  fs::path dir = fs::temp_directory_path() / "tvrl_ckpt_test";
  fs::create_directories(dir);
  CheckpointMeta meta{cfg, LossConfig{}, "csimclr", 3, 17};
  save_checkpoint((dir / "ck").string(), model, {}, meta);
  auto loaded = load_checkpoint<float>((dir / "ck").string());
  CHECK(loaded.meta.strategy == "csimclr");
  CHECK(loaded.meta.epoch == 3);
  CHECK(loaded.meta.seed == 17);
  CHECK(loaded.meta.encoder == cfg);

  Rng rng(5);
  std::vector<Mat<float>> frames;
  Mat<float> img(16, 16);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) img(i, j) = static_cast<float>(rng.uniform());
  frames.push_back(img);
  auto a = model.encode_frames(frames);
  auto b = loaded.model->encode_frames(frames);
  CHECK(a.tokens == b.tokens);

  SECTION("tampered manifest fails loudly") {
    std::ifstream in(dir / "ck.json");
    nlohmann::json j = nlohmann::json::parse(in);
    in.close();
    j["encoder"]["hidden_dim"] = 32;  // no longer matches config_hash
    std::ofstream out(dir / "ck.json");
    out << j.dump(2);
    out.close();
    CHECK_THROWS_AS(load_checkpoint<float>((dir / "ck").string()), io_error);
  }
  SECTION("missing tensors fail loudly") {
    // a manifest whose config demands more layers than the container holds
    nlohmann::json j;
    std::ifstream in(dir / "ck.json");
    j = nlohmann::json::parse(in);
    in.close();
    j["encoder"]["spatial_layers"] = 2;
    j["config_hash"] = config_hash(j["encoder"].get<EncoderConfig>());
    std::ofstream out(dir / "ck.json");
    out << j.dump(2);
    out.close();
    CHECK_THROWS_AS(load_checkpoint<float>((dir / "ck").string()), io_error);
  }
  fs::remove_all(dir);
}
