#include "vardecomp/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>

#include "vardecomp/error.hpp"
#include "vardecomp/numeric.hpp"

namespace vardecomp {

const char* to_string(OutcomeKind kind) {
  return kind == OutcomeKind::Binary ? "binary" : "continuous";
}

OutcomeKind parse_outcome_kind(std::string_view text) {
  if (text == "binary") return OutcomeKind::Binary;
  if (text == "continuous") return OutcomeKind::Continuous;
  throw Error(ErrorKind::InvalidArgument, "outcome kind must be 'binary' or 'continuous', got '" +
                                              std::string(text) + "'");
}

const std::string& CategoryMap::label(int code) const {
  if (code < 1 || code > levels()) {
    throw Error(ErrorKind::IndexOutOfRange, "code " + std::to_string(code) + " for column " + column);
  }
  return labels[static_cast<std::size_t>(code - 1)];
}

int CategoryMap::code_of(std::string_view lbl) const {
  const auto it = std::find(labels.begin(), labels.end(), lbl);
  if (it == labels.end()) {
    throw Error(ErrorKind::UnknownLevel, "level '" + std::string(lbl) + "' in column " + column);
  }
  return static_cast<int>(it - labels.begin()) + 1;
}

CategoryMap numbered_levels(std::string column, int levels) {
  CategoryMap map{std::move(column), {}};
  for (int c = 1; c <= levels; ++c) map.labels.push_back(std::to_string(c));
  return map;
}

bool Dataset::operator==(const Dataset& other) const {
  return y == other.y && a == other.a && z == other.z && x.rows() == other.x.rows() &&
         x.cols() == other.x.cols() && (x.size() == 0 || x == other.x) &&
         outcome_kind == other.outcome_kind && outcome_name == other.outcome_name &&
         hospital == other.hospital && group == other.group &&
         covariate_names == other.covariate_names;
}

void validate(const Dataset& d) {
  const std::size_t n = d.n();
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "dataset has no rows");
  if (d.a.size() != n || d.z.size() != n || static_cast<std::size_t>(d.x.rows()) != n) {
    throw Error(ErrorKind::DimensionMismatch, "column lengths differ");
  }
  if (d.covariate_names.size() != static_cast<std::size_t>(d.p())) {
    throw Error(ErrorKind::DimensionMismatch, "covariate name count differs from covariate columns");
  }
  if (d.J() < 2) throw Error(ErrorKind::SingleLevelFactor, "hospital column has fewer than 2 levels");
  if (d.K() < 2) throw Error(ErrorKind::SingleLevelFactor, "group column has fewer than 2 levels");

  std::vector<std::size_t> count_a(static_cast<std::size_t>(d.J()), 0), count_z(static_cast<std::size_t>(d.K()), 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (d.a[i] < 1 || d.a[i] > d.J()) {
      throw Error(ErrorKind::IndexOutOfRange, "hospital code out of range at row " + std::to_string(i + 1));
    }
    if (d.z[i] < 1 || d.z[i] > d.K()) {
      throw Error(ErrorKind::IndexOutOfRange, "group code out of range at row " + std::to_string(i + 1));
    }
    ++count_a[static_cast<std::size_t>(d.a[i] - 1)];
    ++count_z[static_cast<std::size_t>(d.z[i] - 1)];
    if (!std::isfinite(d.y[i])) {
      throw Error(ErrorKind::MissingValue, "row " + std::to_string(i + 1) + ", column " + d.outcome_name);
    }
    if (d.outcome_kind == OutcomeKind::Binary && d.y[i] != 0.0 && d.y[i] != 1.0) {
      throw Error(ErrorKind::NonBinaryOutcome, "row " + std::to_string(i + 1) + " has outcome " +
                                                   std::to_string(d.y[i]));
    }
    for (int j = 0; j < d.p(); ++j) {
      if (!std::isfinite(d.x(static_cast<Eigen::Index>(i), j))) {
        throw Error(ErrorKind::MissingValue,
                    "row " + std::to_string(i + 1) + ", column " + d.covariate_names[static_cast<std::size_t>(j)]);
      }
    }
  }
  for (int c = 0; c < d.J(); ++c) {
    if (count_a[static_cast<std::size_t>(c)] == 0) {
      throw Error(ErrorKind::EmptyLevel, "hospital level '" + d.hospital.labels[static_cast<std::size_t>(c)] + "' has no rows");
    }
  }
  for (int c = 0; c < d.K(); ++c) {
    if (count_z[static_cast<std::size_t>(c)] == 0) {
      throw Error(ErrorKind::EmptyLevel, "group level '" + d.group.labels[static_cast<std::size_t>(c)] + "' has no rows");
    }
  }
}

Dataset make_dataset(std::vector<double> y, std::vector<int> a, std::vector<int> z, RowMatrix x, int J,
                     int K, OutcomeKind kind, std::vector<std::string> covariate_names) {
  Dataset d;
  d.y = std::move(y);
  d.a = std::move(a);
  d.z = std::move(z);
  d.x = std::move(x);
  if (d.x.rows() == 0 && d.x.cols() == 0) d.x.resize(static_cast<Eigen::Index>(d.y.size()), 0);
  d.outcome_kind = kind;
  d.hospital = numbered_levels("a", J);
  d.group = numbered_levels("z", K);
  if (covariate_names.empty()) {
    for (int j = 1; j <= d.p(); ++j) covariate_names.push_back("x" + std::to_string(j));
  }
  d.covariate_names = std::move(covariate_names);
  validate(d);
  return d;
}

Dataset take_rows(const Dataset& data, std::span<const std::size_t> rows) {
  Dataset out;
  out.outcome_kind = data.outcome_kind;
  out.outcome_name = data.outcome_name;
  out.hospital = data.hospital;
  out.group = data.group;
  out.covariate_names = data.covariate_names;
  out.y.reserve(rows.size());
  out.a.reserve(rows.size());
  out.z.reserve(rows.size());
  out.x.resize(static_cast<Eigen::Index>(rows.size()), data.x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t i = rows[r];
    if (i >= data.n()) throw Error(ErrorKind::IndexOutOfRange, "row index " + std::to_string(i));
    out.y.push_back(data.y[i]);
    out.a.push_back(data.a[i]);
    out.z.push_back(data.z[i]);
    out.x.row(static_cast<Eigen::Index>(r)) = data.x.row(static_cast<Eigen::Index>(i));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

std::vector<std::vector<std::string>> parse_csv(std::istream& in) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  bool first_char = true;

  auto end_field = [&] {
    record.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    // skip blank lines
    if (!(record.size() == 1 && record.front().empty())) records.push_back(std::move(record));
    record.clear();
  };

  char c;
  while (in.get(c)) {
    if (first_char) {
      first_char = false;
      // UTF-8 byte order mark
      if (static_cast<unsigned char>(c) == 0xEF) {
        char b1, b2;
        if (in.get(b1) && in.get(b2) && static_cast<unsigned char>(b1) == 0xBB &&
            static_cast<unsigned char>(b2) == 0xBF) {
          continue;
        }
        throw Error(ErrorKind::BadFile, "malformed byte order mark");
      }
    }
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started) throw Error(ErrorKind::BadFile, "quote inside unquoted field");
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        if (in.peek() == '\n') in.get(c);
        end_record();
        break;
      case '\n':
        end_record();
        break;
      default:
        field.push_back(c);
        field_started = true;
    }
  }
  if (in_quotes) throw Error(ErrorKind::BadFile, "unterminated quoted field");
  if (field_started || !field.empty() || !record.empty()) end_record();
  return records;
}

namespace {

bool is_missing(std::string_view cell) {
  const auto first = cell.find_first_not_of(" \t");
  if (first == std::string_view::npos) return true;
  const auto last = cell.find_last_not_of(" \t");
  const auto trimmed = cell.substr(first, last - first + 1);
  return trimmed == "NA";
}

std::string_view trim(std::string_view cell) {
  const auto first = cell.find_first_not_of(" \t");
  if (first == std::string_view::npos) return {};
  const auto last = cell.find_last_not_of(" \t");
  return cell.substr(first, last - first + 1);
}

double parse_number(std::string_view cell, std::size_t row, const std::string& col) {
  const auto t = trim(cell);
  double v = 0.0;
  const auto* begin = t.data();
  const auto* end = t.data() + t.size();
  if (!t.empty() && *begin == '+') ++begin;
  const auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc{} || res.ptr != end || !std::isfinite(v)) {
    throw Error(ErrorKind::InvalidNumber,
                "row " + std::to_string(row) + ", column " + col + ": '" + std::string(cell) + "'");
  }
  return v;
}

CategoryMap encode_levels(const std::vector<std::vector<std::string>>& records, std::size_t col,
                          const std::string& name, const std::vector<std::string>& explicit_order,
                          std::vector<int>& codes) {
  CategoryMap map{name, explicit_order};
  std::unordered_map<std::string, int> index;
  for (std::size_t c = 0; c < map.labels.size(); ++c) {
    if (!index.emplace(map.labels[c], static_cast<int>(c) + 1).second) {
      throw Error(ErrorKind::InvalidArgument, "duplicate level '" + map.labels[c] + "' for column " + name);
    }
  }
  codes.clear();
  for (std::size_t r = 1; r < records.size(); ++r) {
    const std::string label(trim(records[r][col]));
    auto it = index.find(label);
    if (it == index.end()) {
      if (!explicit_order.empty()) {
        throw Error(ErrorKind::UnknownLevel,
                    "row " + std::to_string(r) + ", column " + name + ": '" + label + "' is not a listed level");
      }
      map.labels.push_back(label);
      it = index.emplace(label, map.levels()).first;
    }
    codes.push_back(it->second);
  }
  return map;
}

}  // namespace

Dataset read_csv(std::istream& in, const ColumnRoles& roles) {
  const auto records = parse_csv(in);
  if (records.empty()) throw Error(ErrorKind::BadFile, "no header row");
  const auto& header = records.front();

  auto column_index = [&](const std::string& name) -> std::size_t {
    if (name.empty()) throw Error(ErrorKind::MissingColumn, "column role not assigned");
    const auto it = std::find_if(header.begin(), header.end(),
                                 [&](const std::string& h) { return trim(h) == name; });
    if (it == header.end()) throw Error(ErrorKind::MissingColumn, name);
    return static_cast<std::size_t>(it - header.begin());
  };

  const std::size_t col_y = column_index(roles.outcome);
  const std::size_t col_a = column_index(roles.hospital);
  const std::size_t col_z = column_index(roles.group);
  std::vector<std::size_t> col_x;
  for (const auto& c : roles.covariates) col_x.push_back(column_index(c));

  std::vector<std::pair<std::size_t, std::string>> used{{col_y, roles.outcome},
                                                        {col_a, roles.hospital},
                                                        {col_z, roles.group}};
  for (std::size_t j = 0; j < col_x.size(); ++j) used.emplace_back(col_x[j], roles.covariates[j]);

  const std::size_t n = records.size() - 1;
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != header.size()) {
      throw Error(ErrorKind::BadFile, "row " + std::to_string(r) + " has " + std::to_string(records[r].size()) +
                                          " fields, header has " + std::to_string(header.size()));
    }
    for (const auto& [col, name] : used) {
      if (is_missing(records[r][col])) {
        throw Error(ErrorKind::MissingValue, "row " + std::to_string(r) + ", column " + name);
      }
    }
  }

  Dataset d;
  d.outcome_kind = roles.outcome_kind;
  d.outcome_name = roles.outcome;
  d.covariate_names = roles.covariates;
  d.y.reserve(n);
  d.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(col_x.size()));
  for (std::size_t r = 1; r < records.size(); ++r) {
    d.y.push_back(parse_number(records[r][col_y], r, roles.outcome));
    for (std::size_t j = 0; j < col_x.size(); ++j) {
      d.x(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(j)) =
          parse_number(records[r][col_x[j]], r, roles.covariates[j]);
    }
  }
  d.hospital = encode_levels(records, col_a, roles.hospital, roles.hospital_levels, d.a);
  d.group = encode_levels(records, col_z, roles.group, roles.group_levels, d.z);
  validate(d);
  return d;
}

Dataset load_csv(const std::filesystem::path& path, const ColumnRoles& roles) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::BadFile, "cannot open " + path.string());
  return read_csv(in, roles);
}

namespace {

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

void write_csv(const Dataset& data, std::ostream& out) {
  out << quote_if_needed(data.outcome_name) << ',' << quote_if_needed(data.hospital.column) << ','
      << quote_if_needed(data.group.column);
  for (const auto& name : data.covariate_names) out << ',' << quote_if_needed(name);
  out << '\n';
  for (std::size_t i = 0; i < data.n(); ++i) {
    out << format_double(data.y[i]) << ',' << quote_if_needed(data.hospital.label(data.a[i])) << ','
        << quote_if_needed(data.group.label(data.z[i]));
    for (int j = 0; j < data.p(); ++j) out << ',' << format_double(data.x(static_cast<Eigen::Index>(i), j));
    out << '\n';
  }
}

void save_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::BadFile, "cannot write " + path.string());
  write_csv(data, out);
}

// ---------------------------------------------------------------------------
// Design rows

std::vector<std::string> OutcomeLayout::names(const Dataset& data) const {
  std::vector<std::string> out(static_cast<std::size_t>(length()));
  out[0] = "(Intercept)";
  for (int j = 0; j < p; ++j) out[static_cast<std::size_t>(covariate(j))] = data.covariate_names[static_cast<std::size_t>(j)];
  const auto& hc = data.hospital.column;
  const auto& gc = data.group.column;
  for (int a = 2; a <= J; ++a) out[static_cast<std::size_t>(hospital(a))] = hc + "[" + data.hospital.label(a) + "]";
  for (int z = 2; z <= K; ++z) out[static_cast<std::size_t>(group(z))] = gc + "[" + data.group.label(z) + "]";
  for (int a = 2; a <= J; ++a) {
    for (int z = 2; z <= K; ++z) {
      out[static_cast<std::size_t>(interaction(a, z))] =
          hc + "[" + data.hospital.label(a) + "]:" + gc + "[" + data.group.label(z) + "]";
    }
  }
  return out;
}

void fill_design_row(std::span<const double> x, const OutcomeLayout& layout, int a, int z,
                     std::span<double> out) {
  if (static_cast<int>(x.size()) != layout.p || static_cast<int>(out.size()) != layout.length()) {
    throw Error(ErrorKind::DimensionMismatch, "design row buffer");
  }
  if (a < 1 || a > layout.J || z < 1 || z > layout.K) {
    throw Error(ErrorKind::IndexOutOfRange, "counterfactual (a=" + std::to_string(a) + ", z=" + std::to_string(z) + ")");
  }
  std::fill(out.begin(), out.end(), 0.0);
  out[0] = 1.0;
  std::copy(x.begin(), x.end(), out.begin() + 1);
  if (a >= 2) out[static_cast<std::size_t>(layout.hospital(a))] = 1.0;
  if (z >= 2) out[static_cast<std::size_t>(layout.group(z))] = 1.0;
  if (a >= 2 && z >= 2) out[static_cast<std::size_t>(layout.interaction(a, z))] = 1.0;
}

Eigen::VectorXd design_row(const Dataset& data, std::size_t i, int a, int z) {
  if (i >= data.n()) throw Error(ErrorKind::IndexOutOfRange, "row " + std::to_string(i));
  const OutcomeLayout layout{data.J(), data.K(), data.p()};
  Eigen::VectorXd row(layout.length());
  fill_design_row(data.row(i), layout, a, z, {row.data(), static_cast<std::size_t>(row.size())});
  return row;
}

RowMatrix outcome_design(const Dataset& data) {
  const OutcomeLayout layout{data.J(), data.K(), data.p()};
  RowMatrix X(static_cast<Eigen::Index>(data.n()), layout.length());
  for (std::size_t i = 0; i < data.n(); ++i) {
    fill_design_row(data.row(i), layout, data.a[i], data.z[i],
                    {X.row(static_cast<Eigen::Index>(i)).data(), static_cast<std::size_t>(layout.length())});
  }
  return X;
}

int hospital_feature_length(int p, int K) noexcept { return 1 + p + (K - 1); }

void fill_hospital_features(std::span<const double> x, int K, int z, std::span<double> out) {
  const int p = static_cast<int>(x.size());
  if (static_cast<int>(out.size()) != hospital_feature_length(p, K)) {
    throw Error(ErrorKind::DimensionMismatch, "hospital feature buffer");
  }
  std::fill(out.begin(), out.end(), 0.0);
  out[0] = 1.0;
  std::copy(x.begin(), x.end(), out.begin() + 1);
  if (z >= 2) out[static_cast<std::size_t>(p + z - 1)] = 1.0;
}

RowMatrix hospital_features(const Dataset& data) {
  const int q = hospital_feature_length(data.p(), data.K());
  RowMatrix F(static_cast<Eigen::Index>(data.n()), q);
  for (std::size_t i = 0; i < data.n(); ++i) {
    fill_hospital_features(data.row(i), data.K(), data.z[i],
                           {F.row(static_cast<Eigen::Index>(i)).data(), static_cast<std::size_t>(q)});
  }
  return F;
}

RowMatrix group_features(const Dataset& data) {
  RowMatrix F(static_cast<Eigen::Index>(data.n()), 1 + data.p());
  F.col(0).setOnes();
  if (data.p() > 0) F.rightCols(data.p()) = data.x;
  return F;
}

}  // namespace vardecomp
