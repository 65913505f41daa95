#pragma once

#include <array>
#include <cstddef>
#include <json.hpp>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vardecomp/dataset.hpp"
#include "vardecomp/models.hpp"

namespace vardecomp {

/// The three plug-in models: outcome mean, hospital assignment given (Z, X),
/// group membership given X.
struct FittedModels {
  GlmFit outcome;
  MultinomialFit hospital;
  MultinomialFit group;
  OutcomeKind outcome_kind = OutcomeKind::Binary;
  int J = 2;
  int K = 2;
  int p = 0;

  /// Throws DimensionMismatch if the coefficient shapes disagree with (J, K, p).
  void check() const;
};

/// Per-model fitting options (zero masks etc.).
struct PipelineConfig {
  FitOptions outcome;
  FitOptions hospital;
  FitOptions group;
};

FittedModels fit_models(const Dataset& data, const PipelineConfig& config = {});

/// Builds models directly from coefficients with zero covariance.
GlmFit make_glm(Eigen::VectorXd theta, Link link, double residual_sd = 0.0);
MultinomialFit make_multinomial(Eigen::MatrixXd coef);

inline constexpr std::size_t kComponents = 8;
inline constexpr std::array<const char*, 9> kComponentNames = {
    "group_indirect",       "group_direct",           "group_covariance",
    "main_hospital",        "effect_modification",    "differential_selection",
    "case_mix",             "residual",               "total"};

struct Components {
  std::array<double, kComponents> w{};  // omega_1 .. omega_8
  double total = 0.0;                    // plug-in marginal variance, computed separately
  std::size_t n_used = 0;

  // Independently assembled sub-totals (used by invariant checks):
  // mean over rows of V_Z[mu(Z, x)] and of E_Z V_A[m(A, Z, x)].
  double group_part = 0.0;
  double hospital_part = 0.0;

  // Diagnostics: raw sample variance of Y (NaN when Y is unavailable) and
  // the (a, z) cells with no observed rows.
  double sample_variance_y = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::pair<int, int>> empty_cells;

  double sum() const noexcept;
  double proportion(std::size_t component) const noexcept { return w[component] / total; }
  /// w_1..w_8 followed by total.
  std::array<double, kComponents + 1> values() const noexcept;
};

void to_json(nlohmann::json& j, const Components& c);

/// Per-row predictions for every counterfactual (a, z) and the derived
/// standardization quantities. Codes are 1-based in the accessors.
class CellTable {
 public:
  /// Offsets of each block inside one row record. Matrices indexed by
  /// (a, z) are stored a-major: (a - 1) * K + (z - 1).
  struct Layout {
    Layout(int J, int K);
    int J, K;
    std::size_t m, v, pa, pz, mu, mudot, muall, tau, ind, dir, stride;
  };

  CellTable(std::size_t rows, int J, int K);

  std::size_t rows() const noexcept { return rows_; }
  int J() const noexcept { return layout_.J; }
  int K() const noexcept { return layout_.K; }
  const Layout& layout() const noexcept { return layout_; }

  // E(Y | a, z, x_i)
  double m(std::size_t i, int a, int z) const noexcept { return at(i, layout_.m, cell(a, z)); }
  // V(Y | a, z, x_i)
  double v(std::size_t i, int a, int z) const noexcept { return at(i, layout_.v, cell(a, z)); }
  // P(A = a | z, x_i)
  double pA(std::size_t i, int a, int z) const noexcept { return at(i, layout_.pa, cell(a, z)); }
  // P(Z = z | x_i)
  double pZ(std::size_t i, int z) const noexcept { return at(i, layout_.pz, z - 1); }
  // mu(z, z*, x_i) = sum_a m(a, z) pA(a, z*)
  double mu(std::size_t i, int z, int zstar) const noexcept {
    return at(i, layout_.mu, (z - 1) * layout_.K + (zstar - 1));
  }
  // mu(z, x_i) = mu(z, z, x_i)
  double mu(std::size_t i, int z) const noexcept { return mu(i, z, z); }
  // mu(z, ., x_i)
  double mu_dot(std::size_t i, int z) const noexcept { return at(i, layout_.mudot, z - 1); }
  // mu(., ., x_i)
  double mu_all(std::size_t i) const noexcept { return at(i, layout_.muall, 0); }
  double tau(std::size_t i, int a, int z) const noexcept { return at(i, layout_.tau, cell(a, z)); }
  double delta_ind(std::size_t i, int z) const noexcept { return at(i, layout_.ind, z - 1); }
  double delta_dir(std::size_t i, int z) const noexcept { return at(i, layout_.dir, z - 1); }

  std::span<double> record(std::size_t i) noexcept { return {data_.data() + i * layout_.stride, layout_.stride}; }
  std::span<const double> record(std::size_t i) const noexcept {
    return {data_.data() + i * layout_.stride, layout_.stride};
  }

 private:
  int cell(int a, int z) const noexcept { return (a - 1) * layout_.K + (z - 1); }
  double at(std::size_t i, std::size_t off, int k) const noexcept {
    return data_[i * layout_.stride + off + static_cast<std::size_t>(k)];
  }

  std::size_t rows_;
  Layout layout_;
  std::vector<double> data_;
};

CellTable build_cells(const RowMatrix& x, const FittedModels& models);
CellTable build_cells(const Dataset& data, const FittedModels& models);

double component_group_indirect(const CellTable& cells);
double component_group_direct(const CellTable& cells);
double component_group_covariance(const CellTable& cells);
double component_main_hospital(const CellTable& cells);
double component_effect_modification(const CellTable& cells);
double component_differential_selection(const CellTable& cells);
/// Sample variance (n - 1) of mu(., ., x_i).
double component_case_mix(const CellTable& cells);
double component_residual(const CellTable& cells);

/// Row-parallel decomposition (OpenMP). Fixed-size row blocks are reduced in
/// index order, so results do not depend on the thread count.
Components decompose(const RowMatrix& x, const FittedModels& models);
/// Adds the sample variance of Y and empty-cell diagnostics.
Components decompose(const Dataset& data, const FittedModels& models);

/// Per-row summands of the components. Slot 6 holds mu(., ., x_i) (the
/// case-mix component is a variance across rows); `within` is V(Y | x_i).
struct RowTerms {
  std::array<double, kComponents> w{};
  double within = 0.0;
};
RowTerms row_terms(const CellTable& cells, std::size_t i);

/// Z-weighted means of delta_ind and delta_dir for row i.
std::pair<double, double> mean_path_effects(const CellTable& cells, std::size_t i);

namespace reference {

/// Serial reference decomposition built from design_row/predict_* and the
/// textbook formulas. Kept for testing and benchmarking.
Components decompose(const RowMatrix& x, const FittedModels& models);

}  // namespace reference

}  // namespace vardecomp
