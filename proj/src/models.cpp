#include "vardecomp/models.hpp"

#include <algorithm>
#include <cmath>

#include "newton.hpp"
#include "vardecomp/error.hpp"
#include "vardecomp/numeric.hpp"

namespace vardecomp {

namespace {

constexpr double kSeparationEps = 1e-12;

// log(1 + exp(eta)) without overflow
double log1pexp(double eta) noexcept {
  return eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

std::vector<std::string> default_names(const char* prefix, Eigen::Index count) {
  std::vector<std::string> out;
  for (Eigen::Index k = 0; k < count; ++k) out.push_back(prefix + std::to_string(k));
  return out;
}

}  // namespace

const char* to_string(Link link) { return link == Link::Logit ? "logit" : "identity"; }

Link link_for(OutcomeKind kind) noexcept {
  return kind == OutcomeKind::Binary ? Link::Logit : Link::Identity;
}

double inverse_link(Link link, double eta) noexcept {
  return link == Link::Logit ? 1.0 / (1.0 + std::exp(-eta)) : eta;
}

namespace detail {

void check_full_rank(const Eigen::MatrixXd& gram, const std::vector<std::string>& names,
                     const std::vector<bool>& mask, double tolerance) {
  std::vector<Eigen::Index> cols;
  for (Eigen::Index k = 0; k < gram.cols(); ++k) {
    if (mask.empty() || !mask[static_cast<std::size_t>(k)]) cols.push_back(k);
  }
  const auto m = static_cast<Eigen::Index>(cols.size());
  if (m == 0) return;

  std::vector<std::string> bad;
  Eigen::VectorXd scale(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const double d = gram(cols[static_cast<std::size_t>(r)], cols[static_cast<std::size_t>(r)]);
    if (!(d > 0.0)) bad.push_back(names[static_cast<std::size_t>(cols[static_cast<std::size_t>(r)])]);
    scale(r) = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
  }
  if (bad.empty()) {
    Eigen::MatrixXd g(m, m);
    for (Eigen::Index r = 0; r < m; ++r) {
      for (Eigen::Index c = 0; c < m; ++c) {
        g(r, c) = gram(cols[static_cast<std::size_t>(r)], cols[static_cast<std::size_t>(c)]) * scale(r) * scale(c);
      }
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(g);
    qr.setThreshold(tolerance);
    const auto rank = qr.rank();
    for (Eigen::Index k = rank; k < m; ++k) {
      bad.push_back(names[static_cast<std::size_t>(cols[static_cast<std::size_t>(qr.colsPermutation().indices()(k))])]);
    }
  }
  if (!bad.empty()) {
    std::string list;
    for (const auto& b : bad) list += (list.empty() ? "" : ", ") + b;
    throw Error(ErrorKind::RankDeficientDesign, "dependent or empty columns: " + list);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// GLM

namespace {

GlmFit fit_glm_named(const RowMatrix& X, std::span<const double> y, Link link, const FitOptions& opt,
                     std::vector<std::string> names) {
  const Eigen::Index n = X.rows();
  const Eigen::Index q = X.cols();
  if (static_cast<Eigen::Index>(y.size()) != n) throw Error(ErrorKind::DimensionMismatch, "outcome length");
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "no rows");
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);

  GlmFit fit;
  fit.link = link;
  fit.names = names.empty() ? default_names("b", q) : std::move(names);
  if (static_cast<Eigen::Index>(fit.names.size()) != q) throw Error(ErrorKind::DimensionMismatch, "coefficient names");
  const Eigen::MatrixXd gram = X.transpose() * X;
  detail::check_full_rank(gram, fit.names, opt.zero_mask, opt.rank_tolerance);

  auto loglik = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = X * beta;
    CompensatedSum s;
    if (link == Link::Logit) {
      for (Eigen::Index i = 0; i < n; ++i) s += yv(i) * eta(i) - log1pexp(eta(i));
    } else {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double r = yv(i) - eta(i);
        s += -0.5 * r * r;
      }
    }
    return s.value();
  };
  auto derivs = [&](const Eigen::VectorXd& beta, Eigen::VectorXd& grad, Eigen::MatrixXd& info) {
    const Eigen::VectorXd eta = X * beta;
    if (link == Link::Logit) {
      Eigen::VectorXd mu(n), w(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        mu(i) = inverse_link(Link::Logit, eta(i));
        w(i) = mu(i) * (1.0 - mu(i));
      }
      grad = X.transpose() * (yv - mu);
      info = X.transpose() * w.asDiagonal() * X;
    } else {
      grad = X.transpose() * (yv - eta);
      info = gram;
    }
  };

  const auto res = detail::newton_maximize(static_cast<int>(q), loglik, derivs, opt);
  if (!res.converged) {
    throw Error(ErrorKind::NotConverged, "outcome model after " + std::to_string(res.iterations) +
                                             " iterations, gradient max-norm " + std::to_string(res.gradient_norm));
  }
  fit.theta = res.beta;
  fit.converged = true;
  fit.iterations = res.iterations;
  fit.gradient_norm = res.gradient_norm;
  fit.log_likelihood_trace = res.trace;

  const Eigen::VectorXd eta = X * fit.theta;
  if (link == Link::Logit) {
    fit.log_likelihood = res.log_likelihood;
    fit.vcov = res.covariance;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m = inverse_link(Link::Logit, eta(i));
      if (m < kSeparationEps || m > 1.0 - kSeparationEps) {
        fit.separation = true;
        break;
      }
    }
  } else {
    std::vector<double> resid(static_cast<std::size_t>(n));
    CompensatedSum rss;
    for (Eigen::Index i = 0; i < n; ++i) {
      resid[static_cast<std::size_t>(i)] = yv(i) - eta(i);
      rss += resid[static_cast<std::size_t>(i)] * resid[static_cast<std::size_t>(i)];
    }
    fit.residual_sd = sample_sd(resid);
    Eigen::Index free = q;
    for (bool masked : opt.zero_mask) free -= masked ? 1 : 0;
    const double dispersion = rss.value() / static_cast<double>(std::max<Eigen::Index>(n - free, 1));
    fit.vcov = dispersion * res.covariance;
    const double sigma2_ml = rss.value() / static_cast<double>(n);
    fit.log_likelihood = sigma2_ml > 0.0
                             ? -0.5 * static_cast<double>(n) * (std::log(2.0 * M_PI * sigma2_ml) + 1.0)
                             : std::numeric_limits<double>::infinity();
  }
  return fit;
}

}  // namespace

GlmFit fit_glm(const RowMatrix& X, std::span<const double> y, Link link, const FitOptions& opt) {
  return fit_glm_named(X, y, link, opt, {});
}

GlmFit fit_glm(const Dataset& data, Link link, const FitOptions& opt) {
  const OutcomeLayout layout{data.J(), data.K(), data.p()};
  return fit_glm_named(outcome_design(data), data.y, link, opt, layout.names(data));
}

// ---------------------------------------------------------------------------
// Multinomial

void softmax_with_reference(std::span<const double> eta, std::span<double> out) noexcept {
  double top = 0.0;
  for (double e : eta) top = std::max(top, e);
  double denom = std::exp(-top);
  out[0] = denom;
  for (std::size_t l = 0; l < eta.size(); ++l) {
    out[l + 1] = std::exp(eta[l] - top);
    denom += out[l + 1];
  }
  for (auto& v : out) v /= denom;
}

MultinomialFit fit_multinomial(const RowMatrix& F, std::span<const int> labels, int levels,
                               const FitOptions& opt) {
  const Eigen::Index n = F.rows();
  const Eigen::Index q = F.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw Error(ErrorKind::DimensionMismatch, "label length");
  if (levels < 2) throw Error(ErrorKind::SingleLevelFactor, "multinomial response needs at least 2 levels");
  std::vector<std::size_t> counts(static_cast<std::size_t>(levels), 0);
  for (int lab : labels) {
    if (lab < 1 || lab > levels) throw Error(ErrorKind::IndexOutOfRange, "label " + std::to_string(lab));
    ++counts[static_cast<std::size_t>(lab - 1)];
  }
  for (int l = 0; l < levels; ++l) {
    if (counts[static_cast<std::size_t>(l)] == 0) {
      throw Error(ErrorKind::EmptyLevel, "response level " + std::to_string(l + 1) + " not observed");
    }
  }

  const int L1 = levels - 1;
  const int dim = L1 * static_cast<int>(q);
  MultinomialFit fit;
  fit.levels = levels;
  fit.feature_names = default_names("f", q);

  const Eigen::MatrixXd gram = F.transpose() * F;
  for (int l = 0; l < L1; ++l) {
    std::vector<bool> level_mask;
    if (!opt.zero_mask.empty()) {
      if (static_cast<int>(opt.zero_mask.size()) != dim) throw Error(ErrorKind::DimensionMismatch, "zero_mask length");
      level_mask.assign(opt.zero_mask.begin() + l * q, opt.zero_mask.begin() + (l + 1) * q);
    }
    detail::check_full_rank(gram, fit.feature_names, level_mask, opt.rank_tolerance);
  }

  // eta(i, l) for levels 2..L
  auto linear = [&](const Eigen::VectorXd& beta) {
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> B(beta.data(), L1, q);
    return Eigen::MatrixXd(F * B.transpose());
  };
  auto loglik = [&](const Eigen::VectorXd& beta) {
    const Eigen::MatrixXd eta = linear(beta);
    CompensatedSum s;
    for (Eigen::Index i = 0; i < n; ++i) {
      double top = 0.0;
      for (int l = 0; l < L1; ++l) top = std::max(top, eta(i, l));
      double denom = std::exp(-top);
      for (int l = 0; l < L1; ++l) denom += std::exp(eta(i, l) - top);
      const int lab = labels[static_cast<std::size_t>(i)];
      s += (lab >= 2 ? eta(i, lab - 2) : 0.0) - (top + std::log(denom));
    }
    return s.value();
  };
  auto derivs = [&](const Eigen::VectorXd& beta, Eigen::VectorXd& grad, Eigen::MatrixXd& info) {
    const Eigen::MatrixXd eta = linear(beta);
    Eigen::MatrixXd prob(n, L1);
    Eigen::MatrixXd resid(n, L1);
    std::vector<double> buf(static_cast<std::size_t>(levels));
    std::vector<double> e(static_cast<std::size_t>(L1));
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int l = 0; l < L1; ++l) e[static_cast<std::size_t>(l)] = eta(i, l);
      softmax_with_reference(e, buf);
      const int lab = labels[static_cast<std::size_t>(i)];
      for (int l = 0; l < L1; ++l) {
        prob(i, l) = buf[static_cast<std::size_t>(l + 1)];
        resid(i, l) = (lab == l + 2 ? 1.0 : 0.0) - prob(i, l);
      }
    }
    const Eigen::MatrixXd G = F.transpose() * resid;  // q x L1
    for (int l = 0; l < L1; ++l) grad.segment(l * q, q) = G.col(l);
    for (int l = 0; l < L1; ++l) {
      for (int m = l; m < L1; ++m) {
        Eigen::VectorXd w = (l == m) ? Eigen::VectorXd(prob.col(l).array() * (1.0 - prob.col(l).array()))
                                     : Eigen::VectorXd(-prob.col(l).array() * prob.col(m).array());
        const Eigen::MatrixXd block = F.transpose() * w.asDiagonal() * F;
        info.block(l * q, m * q, q, q) = block;
        if (m != l) info.block(m * q, l * q, q, q) = block.transpose();
      }
    }
  };

  const auto res = detail::newton_maximize(dim, loglik, derivs, opt);
  if (!res.converged) {
    throw Error(ErrorKind::NotConverged, "multinomial model after " + std::to_string(res.iterations) +
                                             " iterations, gradient max-norm " + std::to_string(res.gradient_norm));
  }
  fit.coef = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      res.beta.data(), L1, q);
  fit.vcov = res.covariance;
  fit.converged = true;
  fit.iterations = res.iterations;
  fit.gradient_norm = res.gradient_norm;
  fit.log_likelihood = res.log_likelihood;
  fit.log_likelihood_trace = res.trace;
  for (int l = 1; l <= levels; ++l) fit.level_names.push_back(std::to_string(l));

  std::vector<double> probs(static_cast<std::size_t>(levels));
  std::vector<double> e(static_cast<std::size_t>(L1));
  for (Eigen::Index i = 0; i < n && !fit.separation; ++i) {
    for (int l = 0; l < L1; ++l) e[static_cast<std::size_t>(l)] = fit.coef.row(l).dot(F.row(i));
    softmax_with_reference(e, probs);
    for (double pr : probs) {
      if (pr < kSeparationEps || pr > 1.0 - kSeparationEps) fit.separation = true;
    }
  }
  return fit;
}

MultinomialFit fit_hospital_model(const Dataset& data, const FitOptions& opt) {
  MultinomialFit fit = fit_multinomial(hospital_features(data), data.a, data.J(), opt);
  fit.level_names = data.hospital.labels;
  fit.feature_names = {"(Intercept)"};
  for (const auto& c : data.covariate_names) fit.feature_names.push_back(c);
  for (int z = 2; z <= data.K(); ++z) fit.feature_names.push_back(data.group.column + "[" + data.group.label(z) + "]");
  return fit;
}

MultinomialFit fit_group_model(const Dataset& data, const FitOptions& opt) {
  MultinomialFit fit = fit_multinomial(group_features(data), data.z, data.K(), opt);
  fit.level_names = data.group.labels;
  fit.feature_names = {"(Intercept)"};
  for (const auto& c : data.covariate_names) fit.feature_names.push_back(c);
  return fit;
}

// ---------------------------------------------------------------------------
// Prediction

double predict_mean(const GlmFit& fit, std::span<const double> row) {
  if (static_cast<Eigen::Index>(row.size()) != fit.theta.size()) {
    throw Error(ErrorKind::DimensionMismatch, "design row length " + std::to_string(row.size()) + " vs " +
                                                  std::to_string(fit.theta.size()) + " coefficients");
  }
  const Eigen::Map<const Eigen::VectorXd> r(row.data(), static_cast<Eigen::Index>(row.size()));
  return inverse_link(fit.link, fit.theta.dot(r));
}

Eigen::VectorXd predict_probs(const MultinomialFit& fit, std::span<const double> feature_row) {
  if (static_cast<Eigen::Index>(feature_row.size()) != fit.coef.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "feature row length " + std::to_string(feature_row.size()) + " vs " +
                                                  std::to_string(fit.coef.cols()));
  }
  const Eigen::Map<const Eigen::VectorXd> f(feature_row.data(), static_cast<Eigen::Index>(feature_row.size()));
  const Eigen::VectorXd eta = fit.coef * f;
  Eigen::VectorXd out(fit.levels);
  softmax_with_reference({eta.data(), static_cast<std::size_t>(eta.size())},
                         {out.data(), static_cast<std::size_t>(out.size())});
  return out;
}

double conditional_variance(const GlmFit& fit, std::span<const double> row, OutcomeKind kind) {
  const double m = predict_mean(fit, row);
  if (kind == OutcomeKind::Binary) return m * (1.0 - m);
  return fit.residual_sd * fit.residual_sd;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  auto out = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

Eigen::MatrixXd matrix_from(const nlohmann::json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows > 0 ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j.at(static_cast<std::size_t>(r)).size()) != cols) {
      throw Error(ErrorKind::BadFile, "ragged matrix");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
  }
  return m;
}

}  // namespace

void to_json(nlohmann::json& j, const GlmFit& fit) {
  j = nlohmann::json{{"link", to_string(fit.link)},
                     {"names", fit.names},
                     {"theta", std::vector<double>(fit.theta.data(), fit.theta.data() + fit.theta.size())},
                     {"vcov", matrix_json(fit.vcov)},
                     {"converged", fit.converged},
                     {"iterations", fit.iterations},
                     {"gradient_norm", fit.gradient_norm},
                     {"log_likelihood", fit.log_likelihood},
                     {"residual_sd", fit.residual_sd},
                     {"separation", fit.separation}};
}

void from_json(const nlohmann::json& j, GlmFit& fit) {
  const auto link = j.at("link").get<std::string>();
  if (link != "logit" && link != "identity") throw Error(ErrorKind::BadFile, "unknown link " + link);
  fit.link = link == "logit" ? Link::Logit : Link::Identity;
  fit.names = j.at("names").get<std::vector<std::string>>();
  const auto theta = j.at("theta").get<std::vector<double>>();
  fit.theta = Eigen::Map<const Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size()));
  fit.vcov = matrix_from(j.at("vcov"));
  fit.converged = j.at("converged").get<bool>();
  fit.iterations = j.at("iterations").get<int>();
  fit.gradient_norm = j.at("gradient_norm").get<double>();
  fit.log_likelihood = j.at("log_likelihood").get<double>();
  fit.residual_sd = j.at("residual_sd").get<double>();
  fit.separation = j.at("separation").get<bool>();
}

void to_json(nlohmann::json& j, const MultinomialFit& fit) {
  j = nlohmann::json{{"levels", fit.levels},
                     {"level_names", fit.level_names},
                     {"feature_names", fit.feature_names},
                     {"coef", matrix_json(fit.coef)},
                     {"vcov", matrix_json(fit.vcov)},
                     {"converged", fit.converged},
                     {"iterations", fit.iterations},
                     {"gradient_norm", fit.gradient_norm},
                     {"log_likelihood", fit.log_likelihood},
                     {"separation", fit.separation}};
}

void from_json(const nlohmann::json& j, MultinomialFit& fit) {
  fit.levels = j.at("levels").get<int>();
  fit.level_names = j.at("level_names").get<std::vector<std::string>>();
  fit.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  fit.coef = matrix_from(j.at("coef"));
  fit.vcov = matrix_from(j.at("vcov"));
  fit.converged = j.at("converged").get<bool>();
  fit.iterations = j.at("iterations").get<int>();
  fit.gradient_norm = j.at("gradient_norm").get<double>();
  fit.log_likelihood = j.at("log_likelihood").get<double>();
  fit.separation = j.at("separation").get<bool>();
  if (fit.coef.rows() != fit.levels - 1) throw Error(ErrorKind::BadFile, "coefficient rows do not match levels");
}

}  // namespace vardecomp
