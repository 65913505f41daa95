#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "support.hpp"
#include "vardecomp/error.hpp"
#include "vardecomp/oracles.hpp"

using namespace vardecomp;

namespace {

const std::filesystem::path kData = VARDECOMP_TEST_DATA;

void check_components(const Components& got, const Components& want, double tol) {
  for (std::size_t k = 0; k < kComponents; ++k) {
    INFO("component " << kComponentNames[k]);
    CHECK(std::abs(got.w[k] - want.w[k]) < tol);
  }
  CHECK(std::abs(got.total - want.total) < tol);
}

double law_sum(const Components& c) {
  double s = 0.0;
  for (double w : c.w) s += w;
  return s;
}

}  // namespace

TEST_CASE("degenerate law") {
  DiscreteLaw law;
  law.J = 1;
  law.K = 1;
  DiscreteLaw::Point pt;
  pt.weight = 1.0;
  pt.pZ = {1.0};
  pt.pA = Eigen::MatrixXd::Ones(1, 1);
  pt.m = Eigen::MatrixXd::Constant(1, 1, 0.3);
  pt.v = Eigen::MatrixXd::Constant(1, 1, 0.21);
  law.support.push_back(pt);
  const auto r = brute_force_components(law);
  CHECK(r.total == doctest::Approx(0.21).epsilon(1e-15));
  for (std::size_t k = 0; k < 7; ++k) CHECK(std::abs(r.components.w[k]) < 1e-15);
  CHECK(r.components.w[7] == doctest::Approx(0.21).epsilon(1e-15));
}

TEST_CASE("uniform assignment and constant mean") {
  DiscreteLaw law;
  Eigen::Matrix2d m = Eigen::Matrix2d::Constant(0.4);
  Eigen::Matrix2d v;
  v << 0.1, 0.2, 0.3, 0.4;
  law.support = {dichotomous_point(0.5, 0.5, 0.5, 0.5, m, v), dichotomous_point(0.5, 0.5, 0.5, 0.5, m, 2 * v)};
  const Components c = dichotomous_components(law);
  for (std::size_t k = 0; k < 7; ++k) CHECK(std::abs(c.w[k]) < 1e-15);
  CHECK(std::abs(c.w[7] - 0.375) < 1e-15);
}

TEST_CASE("equal assignment across groups removes differential selection") {
  Rng rng = make_rng(3, 0);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  DiscreteLaw law;
  for (int s = 0; s < 4; ++s) {
    Eigen::Matrix2d m, v;
    m << u(rng), u(rng), u(rng), u(rng);
    v = m.array() * (1 - m.array());
    const double pi = u(rng);
    law.support.push_back(dichotomous_point(0.25, u(rng), pi, pi, m, v));
  }
  const Components c = dichotomous_components(law);
  CHECK(std::abs(c.w[5]) < 1e-15);
  CHECK(std::abs(c.w[0]) < 1e-15);
  CHECK(std::abs(c.w[2]) < 1e-15);
}

TEST_CASE("hand-built single point law") {
  const DiscreteLaw law = load_law(kData / "law_2x2_single.json");
  const Components closed = dichotomous_components(law);
  const auto brute = brute_force_components(law);
  check_components(closed, brute.components, 1e-12);
  CHECK(std::abs(law_sum(closed) - brute.total) < 1e-12);
  // one support point: no case-mix variance
  CHECK(std::abs(closed.w[6]) < 1e-15);
}

TEST_CASE("closed forms agree with enumeration on random two-by-two laws") {
  Rng rng = make_rng(4, 0);
  for (int t = 0; t < 100; ++t) {
    const DiscreteLaw law = random_law({2, 2, 1 + t % 5, t % 2 == 0}, rng);
    const Components closed = dichotomous_components(law);
    const auto brute = brute_force_components(law);
    check_components(closed, brute.components, 1e-12);
  }
}

TEST_CASE("eight-way sum and grouped sums equal the law's variance") {
  Rng rng = make_rng(5, 0);
  for (int t = 0; t < 60; ++t) {
    const RandomLawOptions opt{1 + t % 6, 1 + t % 4, 1 + t % 7, t % 3 != 0};
    const auto r = brute_force_components(random_law(opt, rng));
    const auto& w = r.components.w;
    CHECK(std::abs(law_sum(r.components) - r.total) < 1e-12);
    CHECK(std::abs(w[0] + w[1] + w[2] - r.group) < 1e-12);
    CHECK(std::abs(w[3] + w[4] + w[5] - r.hospital) < 1e-12);
    CHECK(std::abs(r.group + r.hospital + r.residual + r.case_mix - r.total) < 1e-12);
  }
}

TEST_CASE("additive means give zero-mean path effects") {
  Rng rng = make_rng(6, 0);
  for (int t = 0; t < 20; ++t) {
    const DiscreteLaw law = random_law({2 + t % 4, 2 + t % 3, 3, false, true}, rng);
    for (const auto& pt : law.support) {
      const int K = law.K, J = law.J;
      auto mu = [&](int z, int zs) {
        double s = 0.0;
        for (int a = 0; a < J; ++a) s += pt.m(a, z) * pt.pA(a, zs);
        return s;
      };
      double mudd = 0.0;
      for (int z = 0; z < K; ++z) mudd += pt.pZ[static_cast<std::size_t>(z)] * mu(z, z);
      double ind = 0.0, dir = 0.0;
      for (int z = 0; z < K; ++z) {
        double dot = 0.0;
        for (int zs = 0; zs < K; ++zs) dot += pt.pZ[static_cast<std::size_t>(zs)] * mu(z, zs);
        ind += pt.pZ[static_cast<std::size_t>(z)] * (mu(z, z) - dot);
        dir += pt.pZ[static_cast<std::size_t>(z)] * (dot - mudd);
      }
      CHECK(std::abs(ind) < 1e-12);
      CHECK(std::abs(dir) < 1e-12);
    }
  }
}

TEST_CASE("decompose reproduces enumeration on replicated support") {
  Rng rng = make_rng(7, 0);
  for (int t = 0; t < 20; ++t) {
    const int p = 1 + t % 3;
    const testsupport::ModelSpec spec{2 + t % 5, 2 + t % 3, p, t % 2 ? Link::Identity : Link::Logit};
    const FittedModels m = testsupport::random_models(spec, rng);
    const RowMatrix pts = testsupport::random_covariates(4, p, rng);
    const std::vector<int> counts{3, 1, 2, 4};
    RowMatrix rows(10, p);
    std::vector<double> weights;
    Eigen::Index r = 0;
    for (int s = 0; s < 4; ++s) {
      weights.push_back(counts[static_cast<std::size_t>(s)] / 10.0);
      for (int c = 0; c < counts[static_cast<std::size_t>(s)]; ++c) rows.row(r++) = pts.row(s);
    }
    const Components est = decompose(rows, m);
    const auto brute = brute_force_components(law_from_models(m, pts, weights));
    for (std::size_t k = 0; k < kComponents; ++k) {
      // case-mix carries the n / (n - 1) sample-variance factor
      const double want = k == 6 ? brute.components.w[k] * 10.0 / 9.0 : brute.components.w[k];
      CHECK(std::abs(est.w[k] - want) < 1e-10);
    }
  }
}

TEST_CASE("unsupported dimensions and invalid laws") {
  Rng rng = make_rng(8, 0);
  CHECK_THROWS_AS(dichotomous_components(random_law({3, 2, 2}, rng)), Error);
  DiscreteLaw bad = random_law({2, 2, 2}, rng);
  bad.support[0].weight += 0.1;
  CHECK_THROWS_AS(brute_force_components(bad), Error);
  bad = random_law({2, 2, 2}, rng);
  bad.support[1].pA(0, 0) += 0.2;
  CHECK_THROWS_AS(brute_force_components(bad), Error);
  try {
    dichotomous_components(random_law({2, 3, 1}, rng));
    FAIL("expected UnsupportedDims");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnsupportedDims);
  }
}

TEST_CASE("law JSON round trip and file loading") {
  const DiscreteLaw law = load_law(kData / "law_3x2.json");
  CHECK(law.J == 3);
  CHECK(law.support.size() == 2);
  const nlohmann::json j = law;
  const DiscreteLaw back = j.get<DiscreteLaw>();
  const auto a = brute_force_components(law), b = brute_force_components(back);
  for (std::size_t k = 0; k < kComponents; ++k) CHECK(a.components.w[k] == b.components.w[k]);
  CHECK_THROWS_AS(load_law(kData / "does_not_exist.json"), Error);
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"J":2})").get<DiscreteLaw>(), Error);
}
