#pragma once

// Random model/data builders shared by the unit and acceptance tests.

#include <cmath>
#include <random>

#include "vardecomp/decompose.hpp"
#include "vardecomp/numeric.hpp"

namespace testsupport {

using namespace vardecomp;

inline RowMatrix random_covariates(std::size_t n, int p, Rng& rng) {
  std::normal_distribution<double> norm(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  RowMatrix x(static_cast<Eigen::Index>(n), p);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < p; ++j) x(i, j) = (j % 2 == 0) ? norm(rng) : (coin(rng) ? 1.0 : 0.0);
  }
  return x;
}

struct ModelSpec {
  int J = 2, K = 2, p = 0;
  Link link = Link::Logit;
  double scale = 0.7;
  bool no_interaction = false;  // all A x Z outcome coefficients zero
  double residual_sd = 1.0;     // identity link only
};

inline FittedModels random_models(const ModelSpec& s, Rng& rng) {
  std::normal_distribution<double> norm(0.0, s.scale);
  const OutcomeLayout layout{s.J, s.K, s.p};
  Eigen::VectorXd theta(layout.length());
  for (Eigen::Index k = 0; k < theta.size(); ++k) theta(k) = norm(rng);
  if (s.no_interaction) {
    for (int a = 2; a <= s.J; ++a) {
      for (int z = 2; z <= s.K; ++z) theta(layout.interaction(a, z)) = 0.0;
    }
  }
  Eigen::MatrixXd h(s.J - 1, hospital_feature_length(s.p, s.K));
  for (Eigen::Index r = 0; r < h.rows(); ++r) {
    for (Eigen::Index c = 0; c < h.cols(); ++c) h(r, c) = norm(rng);
  }
  Eigen::MatrixXd g(s.K - 1, 1 + s.p);
  for (Eigen::Index r = 0; r < g.rows(); ++r) {
    for (Eigen::Index c = 0; c < g.cols(); ++c) g(r, c) = norm(rng);
  }
  FittedModels m;
  m.J = s.J;
  m.K = s.K;
  m.p = s.p;
  m.outcome_kind = s.link == Link::Logit ? OutcomeKind::Binary : OutcomeKind::Continuous;
  m.outcome = make_glm(theta, s.link, s.link == Link::Identity ? s.residual_sd : 0.0);
  m.hospital = make_multinomial(h);
  m.group = make_multinomial(g);
  return m;
}

inline double scaled_err(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

}  // namespace testsupport
