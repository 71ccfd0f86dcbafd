#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"
#include "tvrl/encoder.hpp"

using namespace tvrl;
using tvrl::testing::DMat;

namespace {

std::vector<Mat<float>> random_frames(int n, int size, uint64_t seed) {
  Rng rng(seed);
  std::vector<Mat<float>> out;
  for (int f = 0; f < n; ++f) {
    Mat<float> img(size, size);
    for (int i = 0; i < size; ++i)
      for (int j = 0; j < size; ++j)
        img(i, j) = static_cast<float>(rng.uniform());
    out.push_back(std::move(img));
  }
  return out;
}

FrameTokens<float> random_tokens(int t, int d, uint64_t seed, int valid = -1) {
  if (valid < 0) valid = t;
  Rng rng(seed);
  FrameTokens<float> ft;
  ft.tokens.setZero(t, d);
  for (int i = 0; i < valid; ++i)
    for (int j = 0; j < d; ++j)
      ft.tokens(i, j) = static_cast<float>(rng.normal());
  ft.validity.assign(t, 0);
  for (int i = 0; i < valid; ++i) ft.validity[i] = 1;
  return ft;
}

}  // namespace

TEST_CASE("config validation") {
  EncoderConfig c = EncoderConfig::micro();
  CHECK_NOTHROW(c.validate());
  c.hidden_dim = 65;
  CHECK_THROWS_AS(c.validate(), config_error);
  c = EncoderConfig::micro();
  c.image_size = 30;
  CHECK_THROWS_AS(c.validate(), config_error);
  c = EncoderConfig::micro();
  c.clip_capacity = 1;
  CHECK_THROWS_AS(c.validate(), config_error);
}

TEST_CASE("encode_frames: shapes, determinism, independence") {
  EncoderConfig cfg = EncoderConfig::micro();
  Model<float> model(cfg, 42);
  auto frames = random_frames(4, cfg.image_size, 1);

  SECTION("identical frames give identical rows") {
    std::vector<Mat<float>> two = {frames[0], frames[0]};
    auto ft = model.encode_frames(two);
    CHECK(ft.tokens.rows() == 2);
    CHECK(ft.tokens.cols() == cfg.hidden_dim);
    // equal up to GEMM kernel rounding: identical rows at different batch
    // offsets may differ by ~1 ulp in float
    CHECK((ft.tokens.row(0) - ft.tokens.row(1)).cwiseAbs().maxCoeff() < 1e-5f);
  }

  SECTION("permuting the frames permutes the rows identically") {
    auto ft = model.encode_frames(frames);
    std::vector<Mat<float>> permuted = {frames[2], frames[0], frames[3], frames[1]};
    auto ftp = model.encode_frames(permuted);
    CHECK((ftp.tokens.row(0) - ft.tokens.row(2)).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((ftp.tokens.row(1) - ft.tokens.row(0)).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((ftp.tokens.row(3) - ft.tokens.row(1)).cwiseAbs().maxCoeff() == 0.0f);
  }

  SECTION("changing frame j changes only row j") {
    auto ft = model.encode_frames(frames);
    auto altered = frames;
    altered[2] = random_frames(1, cfg.image_size, 99)[0];
    auto ft2 = model.encode_frames(altered);
    CHECK((ft2.tokens.row(0) - ft.tokens.row(0)).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((ft2.tokens.row(1) - ft.tokens.row(1)).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((ft2.tokens.row(3) - ft.tokens.row(3)).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((ft2.tokens.row(2) - ft.tokens.row(2)).cwiseAbs().maxCoeff() > 0.0f);
  }

  SECTION("dimension mismatch is a configuration error") {
    auto bad = random_frames(1, cfg.image_size * 2, 3);
    CHECK_THROWS_AS(model.encode_frames(bad), config_error);
  }

  SECTION("deterministic across identical models") {
    Model<float> model2(cfg, 42);
    auto a = model.encode_frames(frames);
    auto b = model2.encode_frames(frames);
    CHECK((a.tokens - b.tokens).cwiseAbs().maxCoeff() == 0.0f);
  }
}

TEST_CASE("paper-scale geometry: 8 frames -> 8 x 384 tokens") {
  EncoderConfig cfg = EncoderConfig::paper();
  Model<float> model(cfg, 7);
  auto frames = random_frames(8, cfg.image_size, 5);
  auto ft = model.encode_frames(frames);
  CHECK(ft.tokens.rows() == 8);
  CHECK(ft.tokens.cols() == 384);
}

TEST_CASE("sinusoidal time features") {
  SECTION("t = 0: sines are 0, cosines are 1") {
    Mat<double> f = sinusoidal_time_features<double>({0.0}, 16);
    for (int k = 0; k < 8; ++k) {
      CHECK(f(0, k) == 0.0);
      CHECK(f(0, 8 + k) == 1.0);
    }
  }
  SECTION("t = 1 matches the closed-form frequency schedule") {
    Mat<double> f = sinusoidal_time_features<double>({1.0}, 16);
    for (int k = 0; k < 8; ++k) {
      double freq = std::exp(-std::log(10000.0) * k / 7.0);
      CHECK(f(0, k) == Catch::Approx(std::sin(freq)).epsilon(1e-12));
      CHECK(f(0, 8 + k) == Catch::Approx(std::cos(freq)).epsilon(1e-12));
    }
  }
  SECTION("equal time values map to equal embedding rows") {
    EncoderConfig cfg = EncoderConfig::micro();
    cfg.use_time_embedding = true;
    Model<float> model(cfg, 11);
    ag::Tape<float> t(false);
    auto e = model.te_forward(t, {5.0, 5.0, 17.0});
    CHECK((e->value.row(0) - e->value.row(1)).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((e->value.row(0) - e->value.row(2)).cwiseAbs().maxCoeff() > 0.0f);
    CHECK(e->value.cols() == cfg.hidden_dim);
  }
}

TEST_CASE("encode_sequence: time embedding sensitivity") {
  EncoderConfig cfg = EncoderConfig::micro();
  cfg.use_time_embedding = true;
  Model<float> model(cfg, 21);
  auto ft = random_tokens(8, cfg.hidden_dim, 2);
  RelativeTimes times{{0, 30, 90, 110, 200, 260, 300, 410}, std::vector<uint8_t>(8, 1)};
  RelativeTimes doubled = times;
  for (auto& v : doubled.values) v *= 2.0;

  auto a = model.encode_sequence(ft, times, std::nullopt, ClsSelector::kPretrain);
  auto b = model.encode_sequence(ft, doubled, std::nullopt, ClsSelector::kPretrain);
  CHECK((a.cls_embedding - b.cls_embedding).norm() > 1e-6);

  SECTION("without the flag, times are rejected and output is time-free") {
    EncoderConfig cfg2 = EncoderConfig::micro();
    Model<float> m2(cfg2, 21);
    CHECK_THROWS_AS(
        m2.encode_sequence(ft, times, std::nullopt, ClsSelector::kPretrain),
        contract_error);
    auto x = m2.encode_sequence(ft, std::nullopt, std::nullopt, ClsSelector::kPretrain);
    auto y = m2.encode_sequence(ft, std::nullopt, std::nullopt, ClsSelector::kPretrain);
    CHECK((x.cls_embedding - y.cls_embedding).cwiseAbs().maxCoeff() == 0.0f);
  }
  SECTION("missing times with the flag on is a contract violation") {
    CHECK_THROWS_AS(
        model.encode_sequence(ft, std::nullopt, std::nullopt, ClsSelector::kPretrain),
        contract_error);
  }
}

TEST_CASE("encode_sequence: padding invariance") {
  EncoderConfig cfg = EncoderConfig::micro();
  Model<float> model(cfg, 31);
  auto short_ft = random_tokens(5, cfg.hidden_dim, 3);
  auto padded = random_tokens(8, cfg.hidden_dim, 3, 5);  // same 5 valid rows
  auto a = model.encode_sequence(short_ft, std::nullopt, std::nullopt,
                                 ClsSelector::kPretrain);
  auto b = model.encode_sequence(padded, std::nullopt, std::nullopt,
                                 ClsSelector::kPretrain);
  CHECK((a.cls_embedding - b.cls_embedding).cwiseAbs().maxCoeff() == 0.0f);
  CHECK(b.output_tokens.rows() == 8);
  CHECK(a.output_tokens.rows() == 5);
}

TEST_CASE("encode_sequence: masking") {
  EncoderConfig cfg = EncoderConfig::micro();
  cfg.use_mask_token = true;
  Model<float> model(cfg, 41);
  auto ft = random_tokens(8, cfg.hidden_dim, 4);

  auto plain = model.encode_sequence(ft, std::nullopt, std::nullopt,
                                     ClsSelector::kPretrain);
  MaskPlan plan{{3}};
  auto masked = model.encode_sequence(ft, std::nullopt, plan, ClsSelector::kPretrain);
  CHECK((plain.cls_embedding - masked.cls_embedding).cwiseAbs().maxCoeff() > 0.0f);

  SECTION("mask on an invalid position is rejected") {
    auto padded = random_tokens(8, cfg.hidden_dim, 4, 5);
    MaskPlan bad{{6}};
    CHECK_THROWS_AS(
        model.encode_sequence(padded, std::nullopt, bad, ClsSelector::kPretrain),
        contract_error);
  }
  SECTION("model without mask token rejects mask plans") {
    Model<float> m2(EncoderConfig::micro(), 41);
    CHECK_THROWS_AS(
        m2.encode_sequence(ft, std::nullopt, plan, ClsSelector::kPretrain),
        contract_error);
  }
}

TEST_CASE("probe CLS selector uses the external token") {
  EncoderConfig cfg = EncoderConfig::micro();
  Model<float> model(cfg, 51);
  auto ft = random_tokens(6, cfg.hidden_dim, 5);
  nn::ParamStore<float> probe_store(99);
  auto& probe_cls = probe_store.add("probe.cls", 1, cfg.hidden_dim,
                                    nn::Init::kNormal002, true);
  auto a = model.encode_sequence(ft, std::nullopt, std::nullopt,
                                 ClsSelector::kPretrain);
  auto b = model.encode_sequence(ft, std::nullopt, std::nullopt,
                                 ClsSelector::kProbe, &probe_cls);
  CHECK((a.cls_embedding - b.cls_embedding).cwiseAbs().maxCoeff() > 0.0f);
  CHECK_THROWS_AS(
      model.encode_sequence(ft, std::nullopt, std::nullopt, ClsSelector::kProbe),
      contract_error);
}

TEST_CASE("count_parameters") {
  SECTION("paper config lands within 5% of 27.7M") {
    int64_t n = count_parameters(EncoderConfig::paper());
    CHECK(std::abs(static_cast<double>(n) - 27.7e6) / 27.7e6 < 0.05);
  }
  SECTION("doubling temporal layers strictly increases the count") {
    EncoderConfig a = EncoderConfig::micro();
    EncoderConfig b = a;
    b.temporal_layers *= 2;
    CHECK(count_parameters(b) > count_parameters(a));
  }
  SECTION("micro config matches the hand-summed layer formula") {
    EncoderConfig c;
    c.image_size = 8;
    c.patch_size = 4;
    c.hidden_dim = 8;
    c.spatial_heads = 2;
    c.temporal_heads = 2;
    c.spatial_layers = 2;
    c.temporal_layers = 2;
    c.use_time_embedding = true;
    c.use_mask_token = true;
    const int64_t d = c.hidden_dim, r = c.mlp_ratio;
    const int64_t np = 4;  // (8/4)^2
    const int64_t block = 2 * d + (3 * d * d + 3 * d) + (d * d + d) + 2 * d +
                          (r * d * d + r * d) + (r * d * d + d);
    const int64_t spatial = (4 * 4 * d + d) + d + (np + 1) * d + 2 * block + 2 * d;
    const int64_t temporal = d + (c.clip_capacity + 1) * d + 2 * block + 2 * d;
    const int64_t te = 2 * (d * d + d);
    const int64_t mask = d;
    CHECK(count_parameters(c) == spatial + temporal + te + mask);
  }
}
