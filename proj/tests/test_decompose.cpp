#include <doctest.h>
#include <omp.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "vardecomp/decompose.hpp"
#include "vardecomp/error.hpp"
#include "vardecomp/oracles.hpp"

using namespace vardecomp;
using testsupport::ModelSpec;
using testsupport::random_covariates;
using testsupport::random_models;

namespace {

void zero_hospital_terms(FittedModels& m) {
  const OutcomeLayout l{m.J, m.K, m.p};
  for (int a = 2; a <= m.J; ++a) {
    m.outcome.theta(l.hospital(a)) = 0.0;
    for (int z = 2; z <= m.K; ++z) m.outcome.theta(l.interaction(a, z)) = 0.0;
  }
}

void zero_group_terms(FittedModels& m) {
  const OutcomeLayout l{m.J, m.K, m.p};
  for (int z = 2; z <= m.K; ++z) {
    m.outcome.theta(l.group(z)) = 0.0;
    for (int a = 2; a <= m.J; ++a) m.outcome.theta(l.interaction(a, z)) = 0.0;
  }
}

void hospital_ignores_group(FittedModels& m) {
  for (int z = 2; z <= m.K; ++z) m.hospital.coef.col(1 + m.p + (z - 2)).setZero();
}

double logistic(double e) { return 1.0 / (1.0 + std::exp(-e)); }

}  // namespace

TEST_CASE("all-zero coefficients give uniform cells") {
  ModelSpec spec{2, 2, 1};
  Rng rng = make_rng(1, 0);
  FittedModels m = random_models(spec, rng);
  m.outcome.theta.setZero();
  m.hospital.coef.setZero();
  m.group.coef.setZero();
  const RowMatrix x = random_covariates(20, 1, rng);
  const CellTable c = build_cells(x, m);
  for (std::size_t i = 0; i < c.rows(); ++i) {
    for (int a = 1; a <= 2; ++a) {
      for (int z = 1; z <= 2; ++z) {
        CHECK(c.m(i, a, z) == 0.5);
        CHECK(c.pA(i, a, z) == 0.5);
        CHECK(c.tau(i, a, z) == 0.0);
      }
    }
    for (int z = 1; z <= 2; ++z) {
      CHECK(c.pZ(i, z) == 0.5);
      CHECK(c.delta_ind(i, z) == 0.0);
      CHECK(c.delta_dir(i, z) == 0.0);
    }
  }
}

TEST_CASE("cells match hand-evaluated formulas with one binary covariate") {
  FittedModels m;
  m.J = 2;
  m.K = 2;
  m.p = 1;
  // outcome: [1, x, a2, z2, a2:z2]
  Eigen::VectorXd theta(5);
  theta << -0.3, 0.8, 0.5, -0.4, 0.9;
  m.outcome = make_glm(theta, Link::Logit);
  Eigen::MatrixXd h(1, 3);
  h << 0.2, -0.7, 1.1;  // [1, x, z2]
  m.hospital = make_multinomial(h);
  Eigen::MatrixXd g(1, 2);
  g << -0.6, 1.3;
  m.group = make_multinomial(g);

  RowMatrix x(2, 1);
  x << 0.0, 1.0;
  const CellTable c = build_cells(x, m);
  for (std::size_t i = 0; i < 2; ++i) {
    const double xv = x(static_cast<Eigen::Index>(i), 0);
    const double pz2 = logistic(-0.6 + 1.3 * xv);
    CHECK(std::abs(c.pZ(i, 2) - pz2) < 1e-12);
    CHECK(std::abs(c.pZ(i, 1) - (1 - pz2)) < 1e-12);
    for (int z = 1; z <= 2; ++z) {
      const double pa2 = logistic(0.2 - 0.7 * xv + 1.1 * (z == 2));
      CHECK(std::abs(c.pA(i, 2, z) - pa2) < 1e-12);
      for (int a = 1; a <= 2; ++a) {
        const double eta = -0.3 + 0.8 * xv + 0.5 * (a == 2) - 0.4 * (z == 2) + 0.9 * (a == 2 && z == 2);
        CHECK(std::abs(c.m(i, a, z) - logistic(eta)) < 1e-12);
        CHECK(std::abs(c.v(i, a, z) - logistic(eta) * (1 - logistic(eta))) < 1e-12);
      }
    }
    // mu(z, z*) and the derived quantities
    for (int z = 1; z <= 2; ++z) {
      for (int zs = 1; zs <= 2; ++zs) {
        const double want = c.m(i, 1, z) * c.pA(i, 1, zs) + c.m(i, 2, z) * c.pA(i, 2, zs);
        CHECK(std::abs(c.mu(i, z, zs) - want) < 1e-12);
      }
      const double dot = c.mu(i, z, 1) * c.pZ(i, 1) + c.mu(i, z, 2) * c.pZ(i, 2);
      CHECK(std::abs(c.mu_dot(i, z) - dot) < 1e-12);
      CHECK(std::abs(c.delta_ind(i, z) - (c.mu(i, z) - dot)) < 1e-12);
      CHECK(std::abs(c.tau(i, 2, z) - (c.m(i, 2, z) - c.mu(i, z))) < 1e-12);
    }
    const double all = c.mu(i, 1) * c.pZ(i, 1) + c.mu(i, 2) * c.pZ(i, 2);
    CHECK(std::abs(c.mu_all(i) - all) < 1e-12);
    CHECK(std::abs(c.delta_dir(i, 1) - (c.mu_dot(i, 1) - all)) < 1e-12);
  }
}

TEST_CASE("cell table invariants") {
  Rng rng = make_rng(2, 0);
  const FittedModels m = random_models({5, 3, 2}, rng);
  const RowMatrix x = random_covariates(300, 2, rng);
  const CellTable c = build_cells(x, m);
  for (std::size_t i = 0; i < c.rows(); ++i) {
    double sz = 0.0;
    for (int z = 1; z <= 3; ++z) {
      sz += c.pZ(i, z);
      double sa = 0.0, mu = 0.0;
      for (int a = 1; a <= 5; ++a) {
        sa += c.pA(i, a, z);
        mu += c.m(i, a, z) * c.pA(i, a, z);
      }
      CHECK(std::abs(sa - 1.0) < 1e-12);
      CHECK(std::abs(c.mu(i, z) - mu) < 1e-15);
    }
    CHECK(std::abs(sz - 1.0) < 1e-12);
  }
}

TEST_CASE("hospital model ignoring Z makes mu(z, z*) free of z*") {
  Rng rng = make_rng(3, 0);
  FittedModels m = random_models({4, 3, 2}, rng);
  hospital_ignores_group(m);
  const CellTable c = build_cells(random_covariates(100, 2, rng), m);
  for (std::size_t i = 0; i < c.rows(); ++i) {
    for (int z = 1; z <= 3; ++z) {
      for (int zs = 1; zs <= 3; ++zs) CHECK(std::abs(c.mu(i, z, zs) - c.mu(i, z)) < 1e-15);
    }
  }
}

TEST_CASE("dimension mismatch is rejected") {
  Rng rng = make_rng(4, 0);
  const FittedModels m = random_models({3, 2, 2}, rng);
  CHECK_THROWS_AS(build_cells(random_covariates(5, 3, rng), m), Error);
  FittedModels bad = m;
  bad.outcome.theta.conservativeResize(3);
  CHECK_THROWS_AS(decompose(random_covariates(5, 2, rng), bad), Error);
}

TEST_CASE("constant outcome gives zero everywhere") {
  Rng rng = make_rng(5, 0);
  FittedModels m = random_models({4, 3, 2, Link::Identity}, rng);
  m.outcome.theta.setZero();
  m.outcome.theta(0) = 3.0;
  m.outcome.residual_sd = 0.0;
  const Components c = decompose(random_covariates(200, 2, rng), m);
  for (double w : c.w) CHECK(std::abs(w) < 1e-15);
  CHECK(std::abs(c.total) < 1e-15);
}

TEST_CASE("no covariates gives zero case-mix") {
  Rng rng = make_rng(6, 0);
  const FittedModels m = random_models({3, 3, 0}, rng);
  const Components c = decompose(RowMatrix(50, 0), m);
  CHECK(std::abs(c.w[6]) < 1e-15);
}

TEST_CASE("identity residual component equals sigma squared") {
  Rng rng = make_rng(7, 0);
  const FittedModels m = random_models({5, 3, 2, Link::Identity, 0.7, false, 1.7}, rng);
  const Components c = decompose(random_covariates(500, 2, rng), m);
  CHECK(std::abs(c.w[7] - 1.7 * 1.7) < 1e-13);
}

TEST_CASE("deterministic binary outcome has zero residual") {
  Rng rng = make_rng(8, 0);
  FittedModels m = random_models({3, 2, 1}, rng);
  m.outcome.theta.setZero();
  m.outcome.theta(0) = 800.0;  // m == 1 to machine precision
  const Components c = decompose(random_covariates(50, 1, rng), m);
  CHECK(c.w[7] == 0.0);
}

TEST_CASE("sum identity, sub-identities and sign constraints on random models") {
  Rng rng = make_rng(9, 0);
  std::uniform_int_distribution<int> Jd(2, 8), Kd(2, 4), pd(0, 3);
  for (int t = 0; t < 40; ++t) {
    ModelSpec spec{Jd(rng), Kd(rng), pd(rng), t % 2 ? Link::Identity : Link::Logit};
    const FittedModels m = random_models(spec, rng);
    const RowMatrix x = random_covariates(257 + 13 * static_cast<std::size_t>(t), spec.p, rng);
    const Components c = decompose(x, m);
    INFO("J=" << spec.J << " K=" << spec.K << " p=" << spec.p);
    CHECK(std::abs(c.sum() - c.total) <= 1e-10 * std::abs(c.total));
    CHECK(std::abs(c.w[0] + c.w[1] + c.w[2] - c.group_part) <= 1e-10 * std::max(1e-12, c.group_part));
    CHECK(std::abs(c.w[3] + c.w[4] + c.w[5] - c.hospital_part) <= 1e-10 * std::max(1e-12, c.hospital_part));
    for (int k : {0, 1, 3, 4, 6, 7}) CHECK(c.w[static_cast<std::size_t>(k)] >= -1e-12);
    CHECK(c.n_used == static_cast<std::size_t>(x.rows()));
  }
}

TEST_CASE("component functions agree with decompose") {
  Rng rng = make_rng(10, 0);
  const FittedModels m = random_models({4, 3, 2}, rng);
  const RowMatrix x = random_covariates(700, 2, rng);
  const CellTable cells = build_cells(x, m);
  const Components c = decompose(x, m);
  const double got[] = {component_group_indirect(cells),        component_group_direct(cells),
                        component_group_covariance(cells),      component_main_hospital(cells),
                        component_effect_modification(cells),  component_differential_selection(cells),
                        component_case_mix(cells),              component_residual(cells)};
  for (std::size_t k = 0; k < kComponents; ++k) CHECK(std::abs(got[k] - c.w[k]) <= 1e-14 * std::max(1.0, std::abs(c.w[k])));
}

TEST_CASE("parallel kernel agrees with the serial reference") {
  Rng rng = make_rng(11, 0);
  for (int t = 0; t < 12; ++t) {
    ModelSpec spec{2 + t % 6, 2 + t % 3, t % 4, t % 3 == 0 ? Link::Identity : Link::Logit};
    const FittedModels m = random_models(spec, rng);
    const RowMatrix x = random_covariates(600, spec.p, rng);
    const Components par = decompose(x, m);
    const Components ref = reference::decompose(x, m);
    for (std::size_t k = 0; k < kComponents; ++k) {
      CHECK(std::abs(par.w[k] - ref.w[k]) <= 1e-10 * std::max(1e-8, std::abs(ref.total)));
    }
    CHECK(std::abs(par.total - ref.total) <= 1e-10 * std::abs(ref.total));
  }
}

TEST_CASE("results are bit-identical across thread counts") {
  Rng rng = make_rng(12, 0);
  const FittedModels m = random_models({6, 4, 3}, rng);
  const RowMatrix x = random_covariates(5000, 3, rng);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const Components one = decompose(x, m);
  for (int threads : {2, 3, 8}) {
    omp_set_num_threads(threads);
    const Components many = decompose(x, m);
    for (std::size_t k = 0; k < kComponents; ++k) CHECK(many.w[k] == one.w[k]);
    CHECK(many.total == one.total);
  }
  omp_set_num_threads(saved);
}

TEST_CASE("scenario zeros at the plug-in level") {
  Rng rng = make_rng(13, 0);
  for (int t = 0; t < 10; ++t) {
    const ModelSpec spec{3 + t % 4, 2 + t % 3, 2, t % 2 ? Link::Identity : Link::Logit};
    const RowMatrix x = random_covariates(400, 2, rng);
    SUBCASE("outcome free of hospital") {
      FittedModels m = random_models(spec, rng);
      zero_hospital_terms(m);
      const Components c = decompose(x, m);
      CHECK(std::abs(c.w[0]) < 1e-12);
      CHECK(std::abs(c.w[3]) < 1e-12);
      CHECK(std::abs(c.w[4]) < 1e-12);
    }
    SUBCASE("outcome free of group") {
      FittedModels m = random_models(spec, rng);
      zero_group_terms(m);
      const Components c = decompose(x, m);
      CHECK(std::abs(c.w[1]) < 1e-12);
      // tau_a(z) = m(a) - mu(z) still moves with z through selection, and the
      // effect-modification term collapses onto the indirect term
      CHECK(std::abs(c.w[4] - c.w[0]) < 1e-12 * std::max(1.0, c.w[0]));
    }
    SUBCASE("hospital assignment free of group") {
      FittedModels m = random_models(spec, rng);
      hospital_ignores_group(m);
      const Components c = decompose(x, m);
      CHECK(std::abs(c.w[0]) < 1e-12);
      CHECK(std::abs(c.w[2]) < 1e-12);
      CHECK(std::abs(c.w[5]) < 1e-12);
    }
  }
}

TEST_CASE("no interaction and Z-free hospital model remove effect modification") {
  Rng rng = make_rng(14, 0);
  FittedModels m = random_models({5, 3, 2, Link::Identity, 0.7, true}, rng);
  hospital_ignores_group(m);
  const Components c = decompose(random_covariates(300, 2, rng), m);
  CHECK(std::abs(c.w[4]) < 1e-12);
}

TEST_CASE("path effects average to zero without interaction on the identity scale") {
  Rng rng = make_rng(15, 0);
  for (int t = 0; t < 10; ++t) {
    const FittedModels m = random_models({2 + t % 5, 2 + t % 3, 2, Link::Identity, 0.7, true}, rng);
    const CellTable c = build_cells(random_covariates(200, 2, rng), m);
    for (std::size_t i = 0; i < c.rows(); ++i) {
      const auto [ind, dir] = mean_path_effects(c, i);
      CHECK(std::abs(ind) < 1e-10);
      CHECK(std::abs(dir) < 1e-10);
    }
  }
}

TEST_CASE("two-by-two decomposition matches the closed forms") {
  Rng rng = make_rng(16, 0);
  const FittedModels m = random_models({2, 2, 1}, rng);
  // single binary covariate: two support points, weights from the sample
  RowMatrix x(10, 1);
  for (int i = 0; i < 10; ++i) x(i, 0) = i < 4 ? 1.0 : 0.0;
  Components c = decompose(x, m);
  RowMatrix pts(2, 1);
  pts << 1.0, 0.0;
  const std::vector<double> wts{0.4, 0.6};
  const Components closed = dichotomous_components(law_from_models(m, pts, wts));
  for (std::size_t k = 0; k < kComponents; ++k) {
    const double want = k == 6 ? closed.w[k] * 10.0 / 9.0 : closed.w[k];
    CHECK(std::abs(c.w[k] - want) < 1e-10);
  }
}

TEST_CASE("dataset overload reports empty cells and the variance of Y") {
  Rng rng = make_rng(17, 0);
  const FittedModels m = random_models({3, 2, 1}, rng);
  std::vector<double> y{0, 1, 1, 0, 1};
  std::vector<int> a{1, 2, 3, 1, 2};
  std::vector<int> z{1, 1, 1, 2, 2};
  RowMatrix x(5, 1);
  x << 0.1, -0.3, 1.2, 0.5, 0.0;
  const Dataset d = make_dataset(y, a, z, x, 3, 2, OutcomeKind::Binary);
  const Components c = decompose(d, m);
  REQUIRE(c.empty_cells.size() == 1);
  CHECK(c.empty_cells[0] == std::pair<int, int>{3, 2});
  CHECK(std::abs(c.sample_variance_y - 0.3) < 1e-15);
  const Components bare = decompose(d.x, m);
  for (std::size_t k = 0; k < kComponents; ++k) CHECK(c.w[k] == bare.w[k]);
}

TEST_CASE("components JSON") {
  Rng rng = make_rng(18, 0);
  const Components c = decompose(random_covariates(50, 2, rng), random_models({3, 3, 2}, rng));
  const nlohmann::json j = c;
  CHECK(j["components"]["case_mix"].get<double>() == c.w[6]);
  CHECK(j["components"]["total"].get<double>() == c.total);
  CHECK(j["proportions"]["residual"].get<double>() == doctest::Approx(c.w[7] / c.total));
  CHECK(j["n_used"] == 50);
  CHECK(j["sample_variance_y"].is_null());
}
