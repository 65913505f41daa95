#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "vardecomp/dataset.hpp"

namespace vardecomp {

enum class Link { Logit, Identity };

const char* to_string(Link link);
Link link_for(OutcomeKind kind) noexcept;

struct FitOptions {
  int max_iterations = 100;
  double gradient_tolerance = 1e-8;
  int max_halvings = 30;
  // Relative pivot threshold for the rank check on the scaled Gram matrix.
  double rank_tolerance = 1e-10;
  // Extension point for identifiability constraints: coefficients flagged
  // true are held at zero. Empty means unconstrained. For multinomial fits
  // the index is (level - 2) * q + feature.
  std::vector<bool> zero_mask;
};

/// Fixed-effects outcome GLM.
struct GlmFit {
  Eigen::VectorXd theta;
  Eigen::MatrixXd vcov;
  Link link = Link::Logit;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  double log_likelihood = 0.0;
  double residual_sd = 0.0;  // identity link only
  bool separation = false;
  std::vector<std::string> names;
  std::vector<double> log_likelihood_trace;  // objective after each accepted step
};

/// Baseline-category multinomial logit; level 1 is the reference.
struct MultinomialFit {
  Eigen::MatrixXd coef;  // (levels - 1) x q
  Eigen::MatrixXd vcov;  // parameter order: (level - 2) * q + feature
  int levels = 2;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  double log_likelihood = 0.0;
  bool separation = false;
  std::vector<std::string> level_names;
  std::vector<std::string> feature_names;
  std::vector<double> log_likelihood_trace;

  int features() const noexcept { return static_cast<int>(coef.cols()); }
};

/// Newton-Raphson with step-halving from zero start. Throws
/// RankDeficientDesign or NotConverged.
GlmFit fit_glm(const RowMatrix& design, std::span<const double> y, Link link, const FitOptions& options = {});
GlmFit fit_glm(const Dataset& data, Link link, const FitOptions& options = {});

MultinomialFit fit_multinomial(const RowMatrix& features, std::span<const int> labels, int levels,
                               const FitOptions& options = {});

/// Hospital model: A on [1, x, Z dummies].
MultinomialFit fit_hospital_model(const Dataset& data, const FitOptions& options = {});
/// Group model: Z on [1, x].
MultinomialFit fit_group_model(const Dataset& data, const FitOptions& options = {});

double inverse_link(Link link, double eta) noexcept;

double predict_mean(const GlmFit& fit, std::span<const double> row);

/// Reference-category softmax: out[0] = 1 / (1 + sum exp(eta)), out[l] = exp(eta[l-1]) / (...).
void softmax_with_reference(std::span<const double> eta, std::span<double> out) noexcept;

Eigen::VectorXd predict_probs(const MultinomialFit& fit, std::span<const double> feature_row);

/// Bernoulli m(1-m) for binary outcomes, pooled residual variance otherwise.
double conditional_variance(const GlmFit& fit, std::span<const double> row, OutcomeKind kind);

void to_json(nlohmann::json& j, const GlmFit& fit);
void from_json(const nlohmann::json& j, GlmFit& fit);
void to_json(nlohmann::json& j, const MultinomialFit& fit);
void from_json(const nlohmann::json& j, MultinomialFit& fit);

}  // namespace vardecomp
