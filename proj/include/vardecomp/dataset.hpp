#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vardecomp {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class OutcomeKind { Binary, Continuous };

const char* to_string(OutcomeKind kind);
OutcomeKind parse_outcome_kind(std::string_view text);

/// Original label <-> integer code for one categorical column.
/// Code c corresponds to labels[c - 1]; code 1 is the reference level.
struct CategoryMap {
  std::string column;
  std::vector<std::string> labels;

  int levels() const noexcept { return static_cast<int>(labels.size()); }
  const std::string& label(int code) const;
  int code_of(std::string_view label) const;

  bool operator==(const CategoryMap&) const = default;
};

CategoryMap numbered_levels(std::string column, int levels);

/// Encoded analysis data. Immutable once built by make_dataset/load_csv.
struct Dataset {
  std::vector<double> y;
  std::vector<int> a;  // hospital codes 1..J
  std::vector<int> z;  // group codes 1..K
  RowMatrix x;  // n x p covariates
  OutcomeKind outcome_kind = OutcomeKind::Binary;
  std::string outcome_name = "y";
  CategoryMap hospital;
  CategoryMap group;
  std::vector<std::string> covariate_names;

  std::size_t n() const noexcept { return y.size(); }
  int p() const noexcept { return static_cast<int>(x.cols()); }
  int J() const noexcept { return hospital.levels(); }
  std::span<const double> row(std::size_t i) const noexcept {
    return {x.data() + i * static_cast<std::size_t>(x.cols()), static_cast<std::size_t>(x.cols())};
  }
  int K() const noexcept { return group.levels(); }

  bool operator==(const Dataset& other) const;
};

/// Checks every Dataset invariant; throws vardecomp::Error on violation.
void validate(const Dataset& data);

/// Builds and validates. Covariate names default to x1..xp.
Dataset make_dataset(std::vector<double> y, std::vector<int> a, std::vector<int> z, RowMatrix x,
                     int J, int K, OutcomeKind kind, std::vector<std::string> covariate_names = {});

/// Row subset (rows may repeat). Level maps are kept, so a level can end up
/// without observations; fitting reports that.
Dataset take_rows(const Dataset& data, std::span<const std::size_t> rows);

struct ColumnRoles {
  std::string outcome;
  std::string hospital;
  std::string group;
  std::vector<std::string> covariates;
  OutcomeKind outcome_kind = OutcomeKind::Binary;
  // Optional explicit level order; first appearance otherwise.
  std::vector<std::string> hospital_levels;
  std::vector<std::string> group_levels;
};

Dataset read_csv(std::istream& in, const ColumnRoles& roles);
Dataset load_csv(const std::filesystem::path& path, const ColumnRoles& roles);

/// Writes outcome, hospital, group, covariates with round-trip precision.
void write_csv(const Dataset& data, std::ostream& out);
void save_csv(const Dataset& data, const std::filesystem::path& path);

/// RFC-4180 record splitting. Exposed for the CLI and tests.
std::vector<std::vector<std::string>> parse_csv(std::istream& in);

// ---------------------------------------------------------------------------
// Design rows for the fixed-effects outcome model:
//   [1, x_1..x_p, 1(A=2)..1(A=J), 1(Z=2)..1(Z=K), 1(A=a)1(Z=z) for a=2..J, z=2..K]
// Interaction columns are a-major: (2,2),(2,3),..,(2,K),(3,2),...

struct OutcomeLayout {
  int J = 2;
  int K = 2;
  int p = 0;

  int length() const noexcept { return 1 + p + (J - 1) + (K - 1) + (J - 1) * (K - 1); }
  int covariate(int j) const noexcept { return 1 + j; }
  int hospital(int a) const noexcept { return 1 + p + (a - 2); }
  int group(int z) const noexcept { return 1 + p + (J - 1) + (z - 2); }
  int interaction(int a, int z) const noexcept {
    return 1 + p + (J - 1) + (K - 1) + (a - 2) * (K - 1) + (z - 2);
  }
  std::vector<std::string> names(const Dataset& data) const;
};

void fill_design_row(std::span<const double> x, const OutcomeLayout& layout, int a, int z,
                     std::span<double> out);

/// Regressor vector for counterfactual (a, z) holding row i's covariates fixed.
Eigen::VectorXd design_row(const Dataset& data, std::size_t i, int a, int z);

/// Observed-assignment outcome design (n x layout.length()).
RowMatrix outcome_design(const Dataset& data);

/// Hospital-assignment features [1, x, 1(Z=2)..1(Z=K)].
int hospital_feature_length(int p, int K) noexcept;
void fill_hospital_features(std::span<const double> x, int K, int z, std::span<double> out);
RowMatrix hospital_features(const Dataset& data);

/// Group-membership features [1, x].
RowMatrix group_features(const Dataset& data);

}  // namespace vardecomp
