#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"

using namespace tvrl;
using namespace tvrl::ag;
using tvrl::testing::DMat;
using tvrl::testing::gradcheck;
using tvrl::testing::random_mat;

namespace {
constexpr double kOpTol = 2e-6;
}

TEST_CASE("matmul / linear gradients") {
  Rng rng(7);
  DMat a = random_mat(3, 4, rng), b = random_mat(4, 5, rng);
  DMat w = random_mat(5, 4, rng), bias = random_mat(1, 5, rng);
  DMat probe = random_mat(3, 5, rng);

  auto weigh = [&](Tape<double>& t, Var<double> y) {
    // project to a scalar with fixed random weights so every entry matters
    return mean_all(t, rowwise_dot(t, y, t.constant(probe)));
  };

  CHECK(gradcheck(a, [&](Tape<double>& t, Var<double> in) {
          return weigh(t, matmul(t, in, t.constant(b)));
        }) < kOpTol);
  CHECK(gradcheck(b.transpose(), [&](Tape<double>& t, Var<double> in) {
          return weigh(t, matmul_nt(t, t.constant(a), in));
        }) < kOpTol);
  CHECK(gradcheck(a, [&](Tape<double>& t, Var<double> in) {
          return weigh(t, linear(t, in, t.constant(w), t.constant(bias)));
        }) < kOpTol);
  CHECK(gradcheck(w, [&](Tape<double>& t, Var<double> in) {
          return weigh(t, linear(t, t.constant(a), in, t.constant(bias)));
        }) < kOpTol);
  CHECK(gradcheck(bias, [&](Tape<double>& t, Var<double> in) {
          return weigh(t, linear(t, t.constant(a), t.constant(w), in));
        }) < kOpTol);
}

TEST_CASE("matmul_nt with shared operand (similarity matrix)") {
  Rng rng(13);
  DMat z = random_mat(4, 3, rng);
  DMat probe = random_mat(4, 4, rng);
  CHECK(gradcheck(z, [&](Tape<double>& t, Var<double> in) {
          Var<double> sim = matmul_nt(t, in, in);
          return mean_all(t, rowwise_dot(t, sim, t.constant(probe)));
        }) < kOpTol);
}

TEST_CASE("elementwise op gradients") {
  Rng rng(21);
  DMat x = random_mat(4, 6, rng);
  DMat probe = random_mat(4, 6, rng);
  auto weigh = [&](Tape<double>& t, Var<double> y) {
    return mean_all(t, rowwise_dot(t, y, t.constant(probe)));
  };
  for (auto unary : {+[](Tape<double>& t, Var<double> v) { return gelu(t, v); },
                     +[](Tape<double>& t, Var<double> v) { return silu(t, v); },
                     +[](Tape<double>& t, Var<double> v) { return relu(t, v); },
                     +[](Tape<double>& t, Var<double> v) {
                       return affine(t, v, 2.5, -0.75);
                     }}) {
    CHECK(gradcheck(x, [&](Tape<double>& t, Var<double> in) {
            return weigh(t, unary(t, in));
          }) < kOpTol);
  }
  CHECK(gradcheck(x, [&](Tape<double>& t, Var<double> in) {
          return weigh(t, add(t, in, t.constant(x)));
        }) < kOpTol);
  CHECK(gradcheck(x, [&](Tape<double>& t, Var<double> in) {
          return weigh(t, sub(t, t.constant(x), in));
        }) < kOpTol);
}

TEST_CASE("layer_norm gradients") {
  Rng rng(33);
  DMat x = random_mat(5, 8, rng, 2.0);
  DMat g = random_mat(1, 8, rng), b = random_mat(1, 8, rng);
  DMat probe = random_mat(5, 8, rng);
  auto weigh = [&](Tape<double>& t, Var<double> y) {
    return mean_all(t, rowwise_dot(t, y, t.constant(probe)));
  };
  CHECK(gradcheck(x, [&](Tape<double>& t, Var<double> in) {
          return weigh(t, layer_norm(t, in, t.constant(g), t.constant(b)));
        }) < 1e-5);
  CHECK(gradcheck(g, [&](Tape<double>& t, Var<double> in) {
          return weigh(t, layer_norm(t, t.constant(x), in, t.constant(b)));
        }) < kOpTol);
  CHECK(gradcheck(b, [&](Tape<double>& t, Var<double> in) {
          return weigh(t, layer_norm(t, t.constant(x), t.constant(g), in));
        }) < kOpTol);
}

TEST_CASE("normalize_rows / rowwise_dot / lse_rows_offdiag gradients") {
  Rng rng(45);
  DMat x = random_mat(4, 5, rng);
  DMat y = random_mat(4, 5, rng);
  DMat probev = random_mat(4, 1, rng);
  CHECK(gradcheck(x, [&](Tape<double>& t, Var<double> in) {
          return mean_all(
              t, rowwise_dot(t, normalize_rows(t, in), t.constant(y)));
        }) < kOpTol);
  CHECK(gradcheck(x, [&](Tape<double>& t, Var<double> in) {
          return mean_all(t, rowwise_dot(t, in, t.constant(y)));
        }) < kOpTol);
  DMat sq = random_mat(5, 5, rng);
  DMat lse_probe = random_mat(5, 1, rng);
  CHECK(gradcheck(sq, [&](Tape<double>& t, Var<double> in) {
          Var<double> l = lse_rows_offdiag(t, in);
          return mean_all(t, rowwise_dot(t, l, t.constant(lse_probe)));
        }) < kOpTol);
}

TEST_CASE("gather / slice / pick gradients") {
  Rng rng(57);
  DMat x = random_mat(6, 4, rng);
  std::vector<int> rows = {0, 3, 3, 5};
  std::vector<int> cols = {1, 0, 3, 2, 1, 0};
  DMat probe = random_mat(4, 4, rng);
  CHECK(gradcheck(x, [&](Tape<double>& t, Var<double> in) {
          return mean_all(t, rowwise_dot(t, gather_rows(t, in, rows), t.constant(probe)));
        }) < kOpTol);
  CHECK(gradcheck(x, [&](Tape<double>& t, Var<double> in) {
          return mean_all(t, pick_per_row(t, in, cols));
        }) < kOpTol);
  CHECK(gradcheck(x, [&](Tape<double>& t, Var<double> in) {
          return mean_all(t, cols_slice(t, in, 1, 2));
        }) < kOpTol);
}

TEST_CASE("block_attention gradients, full and prefix-masked") {
  Rng rng(69);
  const int blocks = 2, s = 4, d = 6, heads = 2;
  DMat q = random_mat(blocks * s, d, rng), k = random_mat(blocks * s, d, rng),
       v = random_mat(blocks * s, d, rng);
  DMat probe = random_mat(blocks * s, d, rng);
  std::vector<int> prefix = {4, 2};

  auto run = [&](const std::vector<int>& pl, const DMat& qq, const DMat& kk,
                 const DMat& vv, int which) {
    return gradcheck(which == 0 ? qq : which == 1 ? kk : vv,
                     [&](Tape<double>& t, Var<double> in) {
                       Var<double> qv = which == 0 ? in : t.constant(qq);
                       Var<double> kv = which == 1 ? in : t.constant(kk);
                       Var<double> vvv = which == 2 ? in : t.constant(vv);
                       Var<double> o = block_attention(t, qv, kv, vvv, s, heads, pl);
                       return mean_all(t, rowwise_dot(t, o, t.constant(probe)));
                     });
  };
  for (int which = 0; which < 3; ++which) {
    CHECK(run({}, q, k, v, which) < 1e-5);
    CHECK(run(prefix, q, k, v, which) < 1e-5);
  }
}

TEST_CASE("prefix masking excludes padded keys") {
  Rng rng(81);
  const int s = 5, d = 4;
  DMat q = random_mat(s, d, rng), k = random_mat(s, d, rng), v = random_mat(s, d, rng);
  Tape<double> t(false);
  Var<double> full = block_attention(t, t.constant(q), t.constant(k),
                                     t.constant(v), s, 2, {3});
  // rewrite padded key/value rows: valid-query outputs must not move
  DMat k2 = k, v2 = v;
  k2.row(3).setConstant(999.0);
  v2.row(4).setConstant(-999.0);
  Var<double> altered = block_attention(t, t.constant(q), t.constant(k2),
                                        t.constant(v2), s, 2, {3});
  CHECK((full->value.topRows(3) - altered->value.topRows(3)).cwiseAbs().maxCoeff() ==
        0.0);
}

TEST_CASE("with_cls_and_pos gradients") {
  Rng rng(93);
  const int frames = 3, per_frame = 4, d = 5;
  DMat patches = random_mat(frames * per_frame, d, rng);
  DMat cls = random_mat(1, d, rng), pos = random_mat(per_frame + 1, d, rng);
  DMat probe = random_mat(frames * (per_frame + 1), d, rng);
  auto weigh = [&](Tape<double>& t, Var<double> y) {
    return mean_all(t, rowwise_dot(t, y, t.constant(probe)));
  };
  CHECK(gradcheck(patches, [&](Tape<double>& t, Var<double> in) {
          return weigh(t, with_cls_and_pos(t, in, t.constant(cls), t.constant(pos), frames));
        }) < kOpTol);
  CHECK(gradcheck(cls, [&](Tape<double>& t, Var<double> in) {
          return weigh(t, with_cls_and_pos(t, t.constant(patches), in, t.constant(pos), frames));
        }) < kOpTol);
  CHECK(gradcheck(pos, [&](Tape<double>& t, Var<double> in) {
          return weigh(t, with_cls_and_pos(t, t.constant(patches), t.constant(cls), in, frames));
        }) < kOpTol);
}

TEST_CASE("assemble_temporal gradients and contracts") {
  Rng rng(105);
  const int cap = 4, d = 3;
  std::vector<ClipLayout> clips = {{0, 3, {1}}, {3, 4, {}}};
  DMat tokens = random_mat(7, d, rng);
  DMat cls = random_mat(1, d, rng), pos = random_mat(cap + 1, d, rng);
  DMat maskt = random_mat(1, d, rng), te = random_mat(7, d, rng);
  DMat probe = random_mat(2 * (cap + 1), d, rng);
  auto weigh = [&](Tape<double>& t, Var<double> y) {
    return mean_all(t, rowwise_dot(t, y, t.constant(probe)));
  };
  auto build = [&](Tape<double>& t, Var<double> tok, Var<double> c, Var<double> p,
                   Var<double> m, Var<double> e) {
    return assemble_temporal(t, tok, clips, c, p, m, e, cap);
  };
  CHECK(gradcheck(tokens, [&](Tape<double>& t, Var<double> in) {
          return weigh(t, build(t, in, t.constant(cls), t.constant(pos),
                                t.constant(maskt), t.constant(te)));
        }) < kOpTol);
  CHECK(gradcheck(cls, [&](Tape<double>& t, Var<double> in) {
          return weigh(t, build(t, t.constant(tokens), in, t.constant(pos),
                                t.constant(maskt), t.constant(te)));
        }) < kOpTol);
  CHECK(gradcheck(pos, [&](Tape<double>& t, Var<double> in) {
          return weigh(t, build(t, t.constant(tokens), t.constant(cls), in,
                                t.constant(maskt), t.constant(te)));
        }) < kOpTol);
  CHECK(gradcheck(maskt, [&](Tape<double>& t, Var<double> in) {
          return weigh(t, build(t, t.constant(tokens), t.constant(cls),
                                t.constant(pos), in, t.constant(te)));
        }) < kOpTol);
  CHECK(gradcheck(te, [&](Tape<double>& t, Var<double> in) {
          return weigh(t, build(t, t.constant(tokens), t.constant(cls),
                                t.constant(pos), t.constant(maskt), in));
        }) < kOpTol);

  Tape<double> t;
  std::vector<ClipLayout> bad = {{0, 3, {3}}};  // mask index == valid count
  CHECK_THROWS_AS(assemble_temporal(t, t.constant(tokens), bad, t.constant(cls),
                                    t.constant(pos), t.constant(maskt),
                                    static_cast<Var<double>>(nullptr), cap),
                  contract_error);
}

TEST_CASE("loss node gradients") {
  Rng rng(117);
  DMat logits = random_mat(6, 1, rng);
  DMat targets(6, 1);
  for (int i = 0; i < 6; ++i) targets(i, 0) = (i % 2 == 0) ? 1.0 : 0.0;
  CHECK(gradcheck(logits, [&](Tape<double>& t, Var<double> in) {
          return bce_with_logits(t, in, targets);
        }) < kOpTol);
  DMat pred = random_mat(5, 2, rng), tgt = random_mat(5, 2, rng);
  CHECK(gradcheck(pred, [&](Tape<double>& t, Var<double> in) {
          return mse_loss(t, in, tgt);
        }) < kOpTol);
}

TEST_CASE("detach stops gradients; frozen params receive none") {
  Rng rng(129);
  DMat x = random_mat(3, 3, rng);
  Tape<double> t;
  Var<double> in = t.input(x);
  Var<double> frozen_loss = mean_all(t, detach(t, in));
  Var<double> live = mean_all(t, in);
  Var<double> total = add(t, frozen_loss, live);
  t.backward(total);
  // only the live path contributes: gradient is exactly 1/9 everywhere
  REQUIRE(in->grad.size() > 0);
  CHECK(in->grad.isApproxToConstant(1.0 / 9.0, 1e-12));

  Param<double> p;
  p.name = "w";
  p.value = random_mat(2, 2, rng);
  p.trainable = false;
  Tape<double> t2;
  Var<double> pv = t2.param(p);
  CHECK_FALSE(pv->requires_grad);
}

TEST_CASE("tape determinism: identical graphs give identical bits") {
  Rng rng(141);
  DMat x = random_mat(8, 8, rng);
  auto run = [&] {
    Tape<double> t;
    Var<double> in = t.input(x);
    Var<double> h = gelu(t, matmul(t, in, t.constant(x)));
    Var<double> l = mean_all(t, h);
    t.backward(l);
    return std::make_pair(l->value(0, 0), DMat(in->grad));
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  CHECK(l1 == l2);
  CHECK((g1 - g2).cwiseAbs().maxCoeff() == 0.0);
}
