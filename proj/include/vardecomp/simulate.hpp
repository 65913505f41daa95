#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <json.hpp>
#include <string>
#include <string_view>
#include <vector>

#include "vardecomp/decompose.hpp"
#include "vardecomp/uncertainty.hpp"

namespace vardecomp {

/// Data-generating mechanism X -> Z -> A -> Y with X1 ~ Bern(0.5), X2 ~ N(0, 1).
struct Scenario {
  std::string name;
  int J = 5;
  int K = 3;
  Link link = Link::Logit;
  Eigen::MatrixXd group_coef;     // (K-1) x 3: alpha, beta1, beta2
  Eigen::MatrixXd hospital_coef;  // (J-1) x (3 + K-1): alpha, beta1, beta2, gamma_{a,2..K}
  double beta0 = 0.0;
  Eigen::Vector2d beta = Eigen::Vector2d::Zero();
  Eigen::VectorXd gamma;    // J-1, hospitals 2..J
  Eigen::VectorXd theta;    // K-1, groups 2..K
  Eigen::MatrixXd phi;      // (J-1) x (K-1), interaction of hospital a and group z
  double error_sd = 1.0;    // identity link only

  static constexpr int p = 2;

  /// Throws InvalidArgument on inconsistent shapes.
  void validate() const;
  OutcomeKind outcome_kind() const noexcept {
    return link == Link::Logit ? OutcomeKind::Binary : OutcomeKind::Continuous;
  }
  /// The generating parameters as plug-in models (zero covariance).
  FittedModels true_models() const;
};

std::vector<std::string> builtin_scenarios();
/// j5-binary, j10-binary, j5-continuous, j10-continuous.
Scenario builtin_scenario(std::string_view name);

void to_json(nlohmann::json& j, const Scenario& s);
void from_json(const nlohmann::json& j, Scenario& s);
/// Built-in name or path to a JSON file. Throws BadFile / InvalidArgument.
Scenario resolve_scenario(const std::string& name_or_path);

/// n rows drawn sequentially from one stream (substream 0 of `seed`).
Dataset generate(const Scenario& scenario, std::size_t n, std::uint64_t seed);

struct TruthReport {
  Components components;
  ComponentRow mc_se{};  // standard error of each value from between-row variability
  std::size_t superpop_n = 0;
  std::uint64_t seed = 0;
};

/// Evaluates every component at the known parameters over a drawn (>= 1000 row)
/// super-population of covariates. Case-mix uses the n - 1 variance.
TruthReport true_components(const Scenario& scenario, std::size_t superpop_n, std::uint64_t seed);

struct ReplicationOptions {
  std::size_t reps = 200;
  std::uint64_t seed = 0;
  std::size_t draws = 0;  // posterior draws per replicate for SEs; 0 skips
};

struct ReplicationReport {
  std::string scenario;
  std::size_t n = 0;
  std::size_t reps = 0;
  std::uint64_t seed = 0;
  std::size_t draws = 0;
  std::vector<std::size_t> index;      // replicate number of each successful row
  std::vector<ComponentRow> estimates;
  std::vector<ComponentRow> se;        // draw-based SD per replicate (empty when draws = 0)
  std::size_t failures = 0;
  std::vector<std::string> failure_messages;

  ComponentRow mean{}, median{}, mc_sd{}, mean_se{}, sd_minus_se{};
};

/// Replicate r: generate from substream 2r, fit, decompose, and draw SEs from
/// substream 2r + 1. Fit failures are recorded and excluded.
ReplicationReport run_replicates(const Scenario& scenario, std::size_t n, const ReplicationOptions& options);

void to_json(nlohmann::json& j, const TruthReport& t);
void to_json(nlohmann::json& j, const ReplicationReport& r);

/// Long format: scenario,n,replicate,component,estimate,truth.
void write_estimates_long(const ReplicationReport& report, const TruthReport* truth, std::ostream& out,
                          bool header = true);
/// Long format: scenario,n,component,mc_sd,mean_se,difference.
void write_se_long(const ReplicationReport& report, std::ostream& out, bool header = true);
/// One row per replicate: replicate, nine estimates, then nine SEs if present.
void write_replicates_csv(const ReplicationReport& report, std::ostream& out);

}  // namespace vardecomp
