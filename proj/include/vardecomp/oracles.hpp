#pragma once

#include <filesystem>
#include <json.hpp>
#include <vector>

#include "vardecomp/decompose.hpp"
#include "vardecomp/numeric.hpp"

namespace vardecomp {

/// A finite covariate distribution with exact conditional tables, coded like
/// the estimator: hospital a in 1..J, group z in 1..K.
struct DiscreteLaw {
  struct Point {
    double weight = 0.0;        // P(X = x)
    std::vector<double> x;      // covariate values (optional, informational)
    std::vector<double> pZ;     // K entries
    Eigen::MatrixXd pA;         // J x K, column z sums to 1
    Eigen::MatrixXd m;          // J x K, E(Y | a, z, x)
    Eigen::MatrixXd v;          // J x K, V(Y | a, z, x)
  };

  int J = 2;
  int K = 2;
  std::vector<Point> support;

  /// Throws InvalidArgument on shape or probability violations (1e-9 slack).
  void validate() const;
};

/// Two-hospital, two-group shorthand. xi = P(Z = 2 | x), pi[z-1] = P(A = 2 | z, x);
/// m and v are indexed (a, z).
DiscreteLaw::Point dichotomous_point(double weight, double xi, double pi1, double pi2, const Eigen::Matrix2d& m,
                                     const Eigen::Matrix2d& v);

/// Closed forms for J = K = 2 (per-point expressions, then averaged over the
/// support). Throws UnsupportedDims otherwise.
Components dichotomous_components(const DiscreteLaw& law);

struct BruteForceResult {
  Components components;  // case-mix is the population variance V_X
  // Three-way split of V[Y | X], averaged over X.
  double group = 0.0;     // E_X V_{Z|X}[mu(Z, X)]
  double hospital = 0.0;  // E_X E_{Z|X} V_{A|Z,X}[m]
  double residual = 0.0;  // E_X E_{(A,Z)|X}[v]
  // Six-way terms.
  double main_hospital = 0.0;
  double effect_modification = 0.0;
  double differential_selection = 0.0;
  double case_mix = 0.0;
  // V[Y] from the joint moments of (X, Z, A, Y).
  double total = 0.0;
};

BruteForceResult brute_force_components(const DiscreteLaw& law);

/// Law obtained by evaluating fitted models on the given support.
DiscreteLaw law_from_models(const FittedModels& models, const RowMatrix& points, std::span<const double> weights);

struct RandomLawOptions {
  int J = 2;
  int K = 2;
  int support = 3;
  bool binary = true;     // v = m(1 - m); otherwise m ~ N(0, 1), v ~ U(0.1, 2)
  bool additive = false;  // m built from additive a + z effects on the mean scale
};

DiscreteLaw random_law(const RandomLawOptions& options, Rng& rng);

void to_json(nlohmann::json& j, const DiscreteLaw& law);
void from_json(const nlohmann::json& j, DiscreteLaw& law);
DiscreteLaw load_law(const std::filesystem::path& path);

}  // namespace vardecomp
