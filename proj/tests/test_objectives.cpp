#include <catch2/catch_amalgamated.hpp>

#include "loss_oracles.hpp"
#include "test_support.hpp"
#include "tvrl/objectives.hpp"

using namespace tvrl;
using tvrl::testing::DMat;
using tvrl::testing::gradcheck;
using tvrl::testing::random_mat;

TEST_CASE("cosine_similarity") {
  VecX<double> v(3);
  v << 1.0, -2.0, 0.5;
  CHECK(cosine_similarity<double>(v, v) == Catch::Approx(1.0).margin(1e-12));
  CHECK(cosine_similarity<double>(v, VecX<double>(-v)) ==
        Catch::Approx(-1.0).margin(1e-12));
  VecX<double> a(2), b(2);
  a << 1.0, 0.0;
  b << 1.0, 1.0;
  CHECK(cosine_similarity<double>(a, b) ==
        Catch::Approx(std::sqrt(2.0) / 2.0).margin(1e-12));
  VecX<double> zero = VecX<double>::Zero(2);
  CHECK(cosine_similarity<double>(zero, b) == 0.0);  // epsilon clamp
}

TEST_CASE("ntxent analytic cases") {
  SECTION("N=1: the only non-self term is the positive, loss is exactly 0") {
    DMat z(2, 3);
    z << 1.0, 2.0, 3.0, -1.0, 0.5, 2.0;
    CHECK(ntxent_loss<double>(z, 0.1) == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("all embeddings identical, N=2: loss = ln 3") {
    DMat z(4, 5);
    Rng rng(3);
    DMat row = random_mat(1, 5, rng);
    for (int i = 0; i < 4; ++i) z.row(i) = row;
    CHECK(ntxent_loss<double>(z, 0.1) ==
          Catch::Approx(std::log(3.0)).margin(1e-12));
    CHECK(ntxent_loss<double>(z, 0.37) ==
          Catch::Approx(std::log(3.0)).margin(1e-12));
  }
  SECTION("frozen N=2 2D instance at tau=0.1") {
    DMat z(4, 2);
    z << 1.0, 0.0, 0.8, 0.6, -0.5, 0.5, 0.3, -0.9;
    const double frozen = 4.912603891887637;  // brute-force enumeration
    CHECK(ntxent_loss<double>(z, 0.1) == Catch::Approx(frozen).margin(1e-6));
    CHECK(testing::ntxent_oracle(z, 0.1) == Catch::Approx(frozen).margin(1e-9));
  }
  SECTION("empty batch is an error") {
    DMat z(0, 4);
    CHECK_THROWS_AS(ntxent_loss<double>(z, 0.1), contract_error);
  }
}

TEST_CASE("ntxent matches the enumeration oracle on random micro-batches") {
  Rng rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    int n = 1 + rng.uniform_int(8);
    int d = 2 + rng.uniform_int(15);
    double tau = 0.05 + rng.uniform() * 0.95;
    DMat z = random_mat(2 * n, d, rng);
    CHECK(ntxent_loss<double>(z, tau) ==
          Catch::Approx(testing::ntxent_oracle(z, tau)).margin(1e-6));
  }
}

TEST_CASE("ntxent scale invariance") {
  Rng rng(29);
  DMat z = random_mat(8, 6, rng);
  double base = ntxent_loss<double>(z, 0.2);
  for (double c : {0.01, 0.5, 3.0, 250.0}) {
    CHECK(ntxent_loss<double>(DMat(z * c), 0.2) ==
          Catch::Approx(base).margin(1e-9));
  }
}

TEST_CASE("ntxent ordering: better positive similarity lowers the anchor term") {
  // anchor 0 at angle 0; move its positive from far to near while all other
  // rows stay fixed -> anchor 0's term must strictly decrease
  Rng rng(31);
  DMat z = random_mat(6, 2, rng);
  z.row(0) << 1.0, 0.0;
  double prev = std::numeric_limits<double>::infinity();
  for (double angle : {2.5, 1.8, 1.2, 0.6, 0.2, 0.01}) {
    z.row(1) << std::cos(angle), std::sin(angle);
    VecX<double> terms = ntxent_anchor_terms<double>(z, 0.1);
    CHECK(terms(0) < prev);
    CHECK(terms(0) ==
          Catch::Approx(testing::ntxent_anchor_oracle(z, 0.1, 0)).margin(1e-8));
    prev = terms(0);
  }
}

TEST_CASE("ntxent gradient check") {
  Rng rng(43);
  for (int trial = 0; trial < 5; ++trial) {
    int n = 2 + rng.uniform_int(3);
    DMat z = random_mat(2 * n, 8, rng);
    double tau = 0.1 + rng.uniform() * 0.4;
    double err = gradcheck(z, [&](ag::Tape<double>& t, ag::Var<double> in) {
      return ntxent_loss_graph(t, in, tau);
    });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("masked prediction loss") {
  Rng rng(57);
  SECTION("perfect reconstruction -> 0") {
    DMat y = random_mat(4, 6, rng);
    CHECK(masked_prediction_loss<double>(y, y) == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("orthogonal rows -> 1") {
    DMat yp(2, 4), yt(2, 4);
    yp << 1, 0, 0, 0, 0, 0, 2, 0;
    yt << 0, 3, 0, 0, 0, 0, 0, -1;
    CHECK(masked_prediction_loss<double>(yp, yt) == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("anti-aligned rows -> 2 (upper bound)") {
    DMat y = random_mat(3, 5, rng);
    CHECK(masked_prediction_loss<double>(y, DMat(-y)) ==
          Catch::Approx(2.0).margin(1e-12));
  }
  SECTION("frozen m=3 instance") {
    DMat yp(3, 4), yt(3, 4);
    yp << 0.2, -0.4, 0.1, 0.9, -0.7, 0.2, 0.5, -0.1, 0.3, 0.3, -0.8, 0.2;
    yt << 0.1, -0.3, 0.2, 0.8, 0.6, -0.1, -0.4, 0.2, 0.3, 0.4, -0.7, 0.1;
    const double frozen = 0.671096772922115;  // per-row cosine oracle
    CHECK(masked_prediction_loss<double>(yp, yt) ==
          Catch::Approx(frozen).margin(1e-6));
  }
  SECTION("random instances match the row-wise oracle; bounds hold") {
    for (int trial = 0; trial < 25; ++trial) {
      int m = 1 + rng.uniform_int(8);
      int d = 2 + rng.uniform_int(14);
      DMat yp = random_mat(m, d, rng), yt = random_mat(m, d, rng);
      double v = masked_prediction_loss<double>(yp, yt);
      CHECK(v == Catch::Approx(testing::masked_loss_oracle(yp, yt)).margin(1e-6));
      CHECK(v >= 0.0);
      CHECK(v <= 2.0);
    }
  }
  SECTION("empty mask is an error") {
    DMat empty(0, 4);
    CHECK_THROWS_AS(masked_prediction_loss<double>(empty, empty), contract_error);
  }
}

TEST_CASE("masked prediction loss gradient and stop-gradient") {
  Rng rng(71);
  for (int trial = 0; trial < 5; ++trial) {
    DMat yp = random_mat(3 + trial, 8, rng), yt = random_mat(3 + trial, 8, rng);
    double err = gradcheck(yp, [&](ag::Tape<double>& t, ag::Var<double> in) {
      return masked_prediction_loss_graph(t, in, yt);
    });
    CHECK(err < 1e-4);
  }
  SECTION("no gradient reaches the targets") {
    DMat yp = random_mat(4, 6, rng), yt = random_mat(4, 6, rng);
    ag::Tape<double> t;
    ag::Var<double> pred = t.input(yp);
    ag::Var<double> targets = t.input(yt);  // requires grad, but must stay empty
    ag::Var<double> loss = masked_prediction_loss_graph(t, pred, targets);
    t.backward(loss);
    CHECK(pred->grad.size() > 0);
    CHECK(targets->grad.size() == 0);
  }
}

TEST_CASE("tvrl combination") {
  CHECK(tvrl_loss(1.7, 0.3, 0.0) == 1.7);
  CHECK(tvrl_loss(1.7, 0.3, 1.0) == 0.3);
  CHECK(tvrl_loss(1.0986, 1.0, 0.5) == Catch::Approx(1.0493).margin(1e-12));
  CHECK_THROWS_AS(tvrl_loss(1.0, 1.0, 1.5), contract_error);

  SECTION("affine and monotone in each argument") {
    Rng rng(83);
    for (int i = 0; i < 10; ++i) {
      double lc = rng.uniform(0, 3), lm = rng.uniform(0, 2), lam = rng.uniform(0.05, 0.95);
      double d1 = rng.uniform(0, 1), d2 = rng.uniform(0, 1);
      CHECK(tvrl_loss(lc + d1, lm, lam) >= tvrl_loss(lc, lm, lam));
      CHECK(tvrl_loss(lc, lm + d2, lam) >= tvrl_loss(lc, lm, lam));
      // affine: equal mix of endpoints equals midpoint
      double mid = 0.5 * (tvrl_loss(lc, lm, lam) + tvrl_loss(lc + d1, lm, lam));
      CHECK(tvrl_loss(lc + 0.5 * d1, lm, lam) == Catch::Approx(mid).margin(1e-12));
    }
  }
}

TEST_CASE("projection heads") {
  Rng rng(95);
  SECTION("zero final layer -> zero outputs") {
    ProjectionHead<double> head("p", 6, 6, 3, 1);
    head.params().all()[2]->value.setZero();  // w2
    head.params().all()[3]->value.setZero();  // b2
    DMat x = random_mat(4, 6, rng);
    CHECK(project(x, head).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("row independence") {
    ProjectionHead<double> head("p", 5, 5, 2, 2);
    DMat one = random_mat(1, 5, rng);
    DMat two(2, 5);
    two.row(0) = one.row(0);
    two.row(1) = random_mat(1, 5, rng);
    DMat y1 = project(one, head), y2 = project(two, head);
    CHECK((y1.row(0) - y2.row(0)).cwiseAbs().maxCoeff() < 1e-14);
  }
  SECTION("micro head matches hand-evaluated forward") {
    ProjectionHead<double> head("p", 4, 4, 2, 3);
    auto params = head.params().all();
    DMat x = random_mat(2, 4, rng);
    DMat h = x * params[0]->value.transpose();
    h.rowwise() += params[1]->value.row(0);
    h = h.cwiseMax(0.0);
    DMat expect = h * params[2]->value.transpose();
    expect.rowwise() += params[3]->value.row(0);
    CHECK((project(x, head) - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
  SECTION("width mismatch is a configuration error") {
    ProjectionHead<double> head("p", 4, 4, 2, 3);
    DMat bad = random_mat(2, 5, rng);
    CHECK_THROWS_AS(project(bad, head), config_error);
  }
  SECTION("p and q have separate parameters") {
    ProjectionHead<float> p("head_p", 8, 8, 4, 11);
    ProjectionHead<float> q("head_q", 8, 8, 8, 11);
    CHECK(p.params().all()[0]->value.rows() == 8);
    CHECK((p.params().all()[0]->value - q.params().all()[0]->value).cwiseAbs().maxCoeff() >
          0.0f);
  }
}

TEST_CASE("loss config validation") {
  LossConfig c;
  CHECK_NOTHROW(c.validate());
  c.temperature = 0.0;
  CHECK_THROWS_AS(c.validate(), config_error);
  c = LossConfig{};
  c.lambda_weight = 1.2;
  CHECK_THROWS_AS(c.validate(), config_error);
  c = LossConfig{};
  c.mask_ratio = 0.0;
  CHECK_THROWS_AS(c.validate(), config_error);
}
