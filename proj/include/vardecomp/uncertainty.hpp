#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <json.hpp>
#include <string>
#include <vector>

#include "vardecomp/decompose.hpp"
#include "vardecomp/numeric.hpp"

namespace vardecomp {

/// Multivariate normal sampler. Uses Cholesky when the covariance is
/// positive definite, otherwise a symmetric eigen factor with negative
/// eigenvalues floored at zero. Eigenvalues below -tolerance * max(1, |max eig|)
/// throw NonPsdCovariance.
class MvnSampler {
 public:
  MvnSampler(Eigen::VectorXd mean, const Eigen::MatrixXd& cov, double tolerance = 1e-10);

  Eigen::VectorXd draw(Rng& rng) const;
  const Eigen::MatrixXd& factor() const noexcept { return factor_; }
  bool repaired() const noexcept { return repaired_; }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd factor_;  // cov = factor * factor^T
  bool repaired_ = false;
};

enum class UncertaintyMethod { NormalDraws, Bootstrap };
const char* to_string(UncertaintyMethod method);

struct ComponentSummary {
  double point = 0.0;  // median of replicates
  double lo = 0.0;     // 2.5th percentile
  double hi = 0.0;     // 97.5th percentile
  double sd = 0.0;
};

using ComponentRow = std::array<double, kComponents + 1>;  // w1..w8, total

struct UncertaintySummary {
  std::array<ComponentSummary, kComponents + 1> stats{};
  std::size_t B = 0;  // requested replicates
  std::size_t used = 0;
  std::size_t failures = 0;
  UncertaintyMethod method = UncertaintyMethod::NormalDraws;
  std::uint64_t seed = 0;
};

struct UncertaintyResult {
  UncertaintySummary summary;
  std::vector<ComponentRow> replicates;  // successful replicates in index order
  std::vector<std::size_t> index;        // replicate number of each row
};

/// Median, type-7 percentiles and SD per column.
UncertaintySummary summarize(const std::vector<ComponentRow>& rows, UncertaintyMethod method, std::uint64_t seed,
                             std::size_t requested, std::size_t failures);

/// One joint draw of all model coefficients from their normal approximations.
struct ModelSampler {
  explicit ModelSampler(const FittedModels& models);
  FittedModels draw(Rng& rng) const;

  const FittedModels& base;
  MvnSampler outcome, hospital, group;
};

/// Normal-approximation draws of (theta, eta, phi), each redecomposed over
/// the fixed covariate rows. Replicate b uses substream b of `seed`.
UncertaintyResult posterior_draws(const FittedModels& models, const RowMatrix& x, std::size_t B, std::uint64_t seed);
UncertaintyResult posterior_draws(const FittedModels& models, const Dataset& data, std::size_t B, std::uint64_t seed);

/// Nonparametric bootstrap: resample rows, refit all three models, redecompose.
/// Failed refits are dropped; more than `max_failure_fraction` of B failing
/// throws TooManyFailures.
UncertaintyResult bootstrap(const Dataset& data, const PipelineConfig& config, std::size_t B, std::uint64_t seed,
                            double max_failure_fraction = 0.1);

/// Row indices of bootstrap replicate b.
std::vector<std::size_t> bootstrap_rows(std::size_t n, std::uint64_t seed, std::size_t b);

void to_json(nlohmann::json& j, const ComponentSummary& s);
void to_json(nlohmann::json& j, const UncertaintySummary& s);

/// One row per successful replicate, nine component columns.
void write_replicates_csv(const UncertaintyResult& result, std::ostream& out, double scale = 1.0);

}  // namespace vardecomp
