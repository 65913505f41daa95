#include "vardecomp/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <optional>
#include <ostream>
#include <random>

#include "vardecomp/error.hpp"

namespace vardecomp {

MvnSampler::MvnSampler(Eigen::VectorXd mean, const Eigen::MatrixXd& cov, double tolerance) : mean_(std::move(mean)) {
  const auto d = mean_.size();
  if (cov.rows() != d || cov.cols() != d) {
    throw Error(ErrorKind::DimensionMismatch, "covariance is " + std::to_string(cov.rows()) + "x" +
                                                  std::to_string(cov.cols()) + " for a mean of length " +
                                                  std::to_string(d));
  }
  if (!cov.allFinite()) throw Error(ErrorKind::NonPsdCovariance, "covariance has non-finite entries");
  const Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(sym);
  if (llt.info() == Eigen::Success) {
    factor_ = llt.matrixL();
    return;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) throw Error(ErrorKind::NonPsdCovariance, "eigen decomposition failed");
  Eigen::VectorXd lambda = eig.eigenvalues();
  const double scale = std::max(1.0, d > 0 ? lambda.cwiseAbs().maxCoeff() : 0.0);
  if (d > 0 && lambda.minCoeff() < -tolerance * scale) {
    throw Error(ErrorKind::NonPsdCovariance,
                "smallest eigenvalue " + format_double(lambda.minCoeff()) + " below tolerance");
  }
  lambda = lambda.cwiseMax(0.0);
  factor_ = eig.eigenvectors() * lambda.cwiseSqrt().asDiagonal();
  repaired_ = true;
}

Eigen::VectorXd MvnSampler::draw(Rng& rng) const {
  std::normal_distribution<double> norm(0.0, 1.0);
  Eigen::VectorXd e(mean_.size());
  for (Eigen::Index k = 0; k < e.size(); ++k) e(k) = norm(rng);
  return mean_ + factor_ * e;
}

const char* to_string(UncertaintyMethod method) {
  return method == UncertaintyMethod::NormalDraws ? "normal_draws" : "bootstrap";
}

UncertaintySummary summarize(const std::vector<ComponentRow>& rows, UncertaintyMethod method, std::uint64_t seed,
                             std::size_t requested, std::size_t failures) {
  UncertaintySummary s;
  s.method = method;
  s.seed = seed;
  s.B = requested;
  s.used = rows.size();
  s.failures = failures;
  if (rows.size() < 2) throw Error(ErrorKind::InvalidArgument, "need at least two replicates to summarize");
  std::vector<double> col(rows.size());
  for (std::size_t k = 0; k < kComponents + 1; ++k) {
    for (std::size_t r = 0; r < rows.size(); ++r) col[r] = rows[r][k];
    s.stats[k] = {median(col), quantile(col, 0.025), quantile(col, 0.975), sample_sd(col)};
  }
  return s;
}

// ---------------------------------------------------------------------------

namespace {

Eigen::VectorXd flatten(const Eigen::MatrixXd& coef) {
  // parameter order (level - 2) * q + feature, i.e. row-major
  Eigen::VectorXd out(coef.size());
  for (Eigen::Index r = 0; r < coef.rows(); ++r) {
    for (Eigen::Index c = 0; c < coef.cols(); ++c) out(r * coef.cols() + c) = coef(r, c);
  }
  return out;
}

void unflatten(const Eigen::VectorXd& v, Eigen::MatrixXd& coef) {
  for (Eigen::Index r = 0; r < coef.rows(); ++r) {
    for (Eigen::Index c = 0; c < coef.cols(); ++c) coef(r, c) = v(r * coef.cols() + c);
  }
}

ComponentRow row_of(const Components& c) { return c.values(); }

}  // namespace

ModelSampler::ModelSampler(const FittedModels& models)
    : base(models),
      outcome(models.outcome.theta, models.outcome.vcov),
      hospital(flatten(models.hospital.coef), models.hospital.vcov),
      group(flatten(models.group.coef), models.group.vcov) {}

FittedModels ModelSampler::draw(Rng& rng) const {
  FittedModels m = base;
  m.outcome.theta = outcome.draw(rng);
  unflatten(hospital.draw(rng), m.hospital.coef);
  unflatten(group.draw(rng), m.group.coef);
  return m;
}

UncertaintyResult posterior_draws(const FittedModels& models, const RowMatrix& x, std::size_t B, std::uint64_t seed) {
  if (B < 2) throw Error(ErrorKind::InvalidArgument, "B must be at least 2");
  models.check();
  const ModelSampler sampler(models);

  std::vector<ComponentRow> rows(B);
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(B); ++b) {
    try {
      Rng rng = make_rng(seed, static_cast<std::uint64_t>(b));
      rows[static_cast<std::size_t>(b)] = row_of(decompose(x, sampler.draw(rng)));
    } catch (...) {
#pragma omp critical(vardecomp_draw_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  UncertaintyResult res;
  res.summary = summarize(rows, UncertaintyMethod::NormalDraws, seed, B, 0);
  res.replicates = std::move(rows);
  res.index.resize(B);
  for (std::size_t b = 0; b < B; ++b) res.index[b] = b;
  return res;
}

UncertaintyResult posterior_draws(const FittedModels& models, const Dataset& data, std::size_t B,
                                  std::uint64_t seed) {
  if (data.J() != models.J || data.K() != models.K || data.p() != models.p) {
    throw Error(ErrorKind::DimensionMismatch, "dataset does not match the fitted models");
  }
  return posterior_draws(models, data.x, B, seed);
}

std::vector<std::size_t> bootstrap_rows(std::size_t n, std::uint64_t seed, std::size_t b) {
  Rng rng = make_rng(seed, b);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> rows(n);
  for (auto& r : rows) r = pick(rng);
  return rows;
}

UncertaintyResult bootstrap(const Dataset& data, const PipelineConfig& config, std::size_t B, std::uint64_t seed,
                            double max_failure_fraction) {
  if (B < 2) throw Error(ErrorKind::InvalidArgument, "B must be at least 2");
  if (data.n() == 0) throw Error(ErrorKind::InvalidArgument, "empty dataset");

  std::vector<std::optional<ComponentRow>> rows(B);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(B); ++b) {
    try {
      const auto idx = bootstrap_rows(data.n(), seed, static_cast<std::size_t>(b));
      const Dataset boot = take_rows(data, idx);
      rows[static_cast<std::size_t>(b)] = row_of(decompose(boot, fit_models(boot, config)));
    } catch (const Error&) {
      // dropped; counted below
    }
  }

  UncertaintyResult res;
  std::size_t failures = 0;
  for (std::size_t b = 0; b < B; ++b) {
    if (rows[b]) {
      res.replicates.push_back(*rows[b]);
      res.index.push_back(b);
    } else {
      ++failures;
    }
  }
  if (static_cast<double>(failures) > max_failure_fraction * static_cast<double>(B)) {
    throw Error(ErrorKind::TooManyFailures, std::to_string(failures) + " of " + std::to_string(B) +
                                                " bootstrap refits failed");
  }
  res.summary = summarize(res.replicates, UncertaintyMethod::Bootstrap, seed, B, failures);
  return res;
}

void to_json(nlohmann::json& j, const ComponentSummary& s) {
  j = nlohmann::json{{"point", s.point}, {"lo", s.lo}, {"hi", s.hi}, {"sd", s.sd}};
}

void to_json(nlohmann::json& j, const UncertaintySummary& s) {
  nlohmann::json comp = nlohmann::json::object();
  for (std::size_t k = 0; k < s.stats.size(); ++k) comp[kComponentNames[k]] = s.stats[k];
  j = nlohmann::json{{"method", to_string(s.method)}, {"B", s.B},         {"used", s.used},
                     {"failures", s.failures},       {"seed", s.seed},    {"components", comp}};
}

void write_replicates_csv(const UncertaintyResult& result, std::ostream& out, double scale) {
  for (std::size_t k = 0; k < kComponentNames.size(); ++k) out << (k ? "," : "") << kComponentNames[k];
  out << '\n';
  for (const auto& row : result.replicates) {
    for (std::size_t k = 0; k < row.size(); ++k) out << (k ? "," : "") << format_double(row[k] * scale);
    out << '\n';
  }
}

}  // namespace vardecomp
