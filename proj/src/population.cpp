#include "rerand/population.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <sstream>

#include "rerand/error.hpp"

namespace rerand {

namespace {

void check_finite(const Eigen::VectorXd& v, const char* what) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw ValidationError(std::string(what) + " has a missing or non-finite entry at row " + std::to_string(i + 1));
    }
  }
}

std::string trim_ws(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_line(const std::string& line, char delimiter) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delimiter) {
      out.push_back(trim_ws(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  out.push_back(trim_ws(field));
  return out;
}

std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double value = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  if (*begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return value;
}

double parse_cell(const Table& table, std::size_t row, std::size_t col, const char* role) {
  const std::string& cell = table.rows[row][col];
  if (cell.empty()) {
    throw ValidationError(std::string("missing ") + role + " at (row " + std::to_string(row + 1) + ", col " +
                          std::to_string(col + 1) + " '" + table.header[col] + "')");
  }
  const auto v = parse_double(cell);
  if (!v || !std::isfinite(*v)) {
    throw ValidationError("non-numeric at (row " + std::to_string(row + 1) + ", col " + std::to_string(col + 1) +
                          " '" + table.header[col] + "'): '" + cell + "'");
  }
  return *v;
}

}  // namespace

FinitePopulation::FinitePopulation(Eigen::MatrixXd covariates, std::size_t n1, std::optional<Eigen::VectorXd> y1,
                                   std::optional<Eigen::VectorXd> y0, std::vector<std::string> labels,
                                   std::vector<std::string> covariate_names)
    : covariates_(std::move(covariates)),
      n1_(n1),
      y1_(std::move(y1)),
      y0_(std::move(y0)),
      labels_(std::move(labels)),
      covariate_names_(std::move(covariate_names)) {
  const std::size_t n = this->n();
  if (n < 2) throw ValidationError("population needs at least 2 units");
  if (n1_ < 1 || n1_ >= n) {
    throw ValidationError("group sizes must satisfy 1 <= n1 < n (n1 + n0 = n); got n1 = " + std::to_string(n1_) +
                          ", n = " + std::to_string(n));
  }
  if (!covariates_.allFinite()) throw ValidationError("covariate matrix has a non-finite entry");
  if (y1_) {
    if (static_cast<std::size_t>(y1_->size()) != n) throw ValidationError("y1 length differs from n");
    check_finite(*y1_, "y1");
  }
  if (y0_) {
    if (static_cast<std::size_t>(y0_->size()) != n) throw ValidationError("y0 length differs from n");
    check_finite(*y0_, "y0");
  }
  if (!labels_.empty() && labels_.size() != n) throw ValidationError("label count differs from n");
  if (covariate_names_.empty()) {
    for (std::size_t j = 0; j < k(); ++j) covariate_names_.push_back("x" + std::to_string(j + 1));
  } else if (covariate_names_.size() != k()) {
    throw ValidationError("covariate name count differs from K");
  }
}

const Eigen::VectorXd& FinitePopulation::y1() const {
  if (!y1_) throw ValidationError("potential outcome y1 is not available");
  return *y1_;
}

const Eigen::VectorXd& FinitePopulation::y0() const {
  if (!y0_) throw ValidationError("potential outcome y0 is not available");
  return *y0_;
}

FinitePopulation FinitePopulation::with_covariates(Eigen::MatrixXd covariates, std::vector<std::string> names) const {
  return FinitePopulation(std::move(covariates), n1_, y1_, y0_, labels_, std::move(names));
}

FinitePopulation FinitePopulation::leading_covariates(std::size_t k) const {
  if (k > this->k()) throw ValidationError("requested more covariates than available");
  std::vector<std::string> names(covariate_names_.begin(), covariate_names_.begin() + static_cast<std::ptrdiff_t>(k));
  return with_covariates(covariates_.leftCols(static_cast<Eigen::Index>(k)), std::move(names));
}

FinitePopulation FinitePopulation::with_outcomes(Eigen::VectorXd y1, Eigen::VectorXd y0) const {
  return FinitePopulation(covariates_, n1_, std::move(y1), std::move(y0), labels_, covariate_names_);
}

std::size_t Table::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw ValidationError("column '" + name + "' not found in header");
  return static_cast<std::size_t>(it - header.begin());
}

std::vector<double> Table::numeric_column(const std::string& name) const {
  const std::size_t col = column(name);
  std::vector<double> out(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) out[r] = parse_cell(*this, r, col, "value");
  return out;
}

Table read_table(std::istream& source, char delimiter) {
  Table table;
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(source, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!have_header) {
      if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
      if (trim_ws(line).empty()) continue;
      table.header = split_line(line, delimiter);
      have_header = true;
      continue;
    }
    if (trim_ws(line).empty()) continue;
    auto fields = split_line(line, delimiter);
    if (fields.size() != table.header.size()) {
      throw ValidationError("line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                            " fields, header has " + std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(fields));
  }
  if (!have_header) throw ValidationError("input has no header row");
  return table;
}

FinitePopulation load_population(std::istream& source, const ColumnSchema& schema, std::size_t n1, char delimiter) {
  const Table table = read_table(source, delimiter);
  const std::size_t n = table.rows.size();
  if (schema.require_both_outcomes && (!schema.y1 || !schema.y0)) {
    throw ValidationError("both potential outcome columns (y1 and y0) are required");
  }
  if (schema.y1.has_value() != schema.y0.has_value()) {
    throw ValidationError("y1 and y0 must be given together");
  }

  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(schema.covariates.size()));
  for (std::size_t j = 0; j < schema.covariates.size(); ++j) {
    const std::size_t col = table.column(schema.covariates[j]);
    for (std::size_t r = 0; r < n; ++r) {
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = parse_cell(table, r, col, "covariate");
    }
  }
  auto outcome = [&](const std::optional<std::string>& name) -> std::optional<Eigen::VectorXd> {
    if (!name) return std::nullopt;
    const std::size_t col = table.column(*name);
    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    for (std::size_t r = 0; r < n; ++r) y[static_cast<Eigen::Index>(r)] = parse_cell(table, r, col, "outcome");
    return y;
  };
  std::vector<std::string> labels;
  if (schema.label) {
    const std::size_t col = table.column(*schema.label);
    for (const auto& row : table.rows) labels.push_back(row[col]);
  }
  return FinitePopulation(std::move(x), n1, outcome(schema.y1), outcome(schema.y0), std::move(labels),
                          schema.covariates);
}

Eigen::LLT<Eigen::MatrixXd> checked_cholesky(const Eigen::MatrixXd& cov, const std::vector<std::string>& names) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (cov.size() == 0) return llt;
  const double max_diag = cov.diagonal().maxCoeff();
  auto column_name = [&](Eigen::Index j) {
    return j < static_cast<Eigen::Index>(names.size()) ? "'" + names[static_cast<std::size_t>(j)] + "'"
                                                        : "#" + std::to_string(j + 1);
  };
  auto fail = [&](Eigen::Index j) {
    std::string msg = "singular covariate covariance: column " + column_name(j) +
                      " is numerically a linear combination of";
    if (j == 0) {
      msg += " the intercept (constant column)";
    } else {
      for (Eigen::Index i = 0; i < j; ++i) msg += (i ? ", " : " ") + column_name(i);
    }
    throw SingularCovarianceError(msg);
  };
  if (!(max_diag > 0.0)) fail(0);
  const Eigen::MatrixXd l = llt.matrixL();
  for (Eigen::Index j = 0; j < cov.rows(); ++j) {
    const double pivot = l(j, j) * l(j, j);
    if (!(pivot >= kSingularityTolerance * max_diag) || !std::isfinite(pivot)) fail(j);
  }
  if (llt.info() != Eigen::Success) fail(cov.rows() - 1);
  return llt;
}

CovariateMoments::CovariateMoments(const Eigen::MatrixXd& covariates, const std::vector<std::string>& names) {
  const Eigen::Index n = covariates.rows();
  if (n < 2) throw ValidationError("covariate moments need at least 2 rows");
  mean_ = covariates.colwise().mean().transpose();
  const Eigen::MatrixXd centered = covariates.rowwise() - mean_.transpose();
  cov_ = (centered.transpose() * centered) / static_cast<double>(n - 1);
  llt_ = checked_cholesky(cov_, names);
}

Eigen::MatrixXd CovariateMoments::whiten(const Eigen::MatrixXd& x) const {
  const Eigen::MatrixXd centered = (x.rowwise() - mean_.transpose()).transpose();
  return llt_.matrixL().solve(centered).transpose();
}

Eigen::VectorXd CovariateMoments::whiten_vector(const Eigen::VectorXd& b) const { return llt_.matrixL().solve(b); }

double CovariateMoments::quadratic_form(const Eigen::VectorXd& b) const { return whiten_vector(b).squaredNorm(); }

CovariateMoments covariate_moments(const FinitePopulation& pop) {
  return CovariateMoments(pop.covariates(), pop.covariate_names());
}

FinitePopulation trim_covariates(const FinitePopulation& pop, double lower_q, double upper_q) {
  if (!(lower_q >= 0.0 && lower_q < upper_q && upper_q <= 1.0)) {
    throw ValidationError("trim quantiles must satisfy 0 <= lower < upper <= 1");
  }
  const auto n = static_cast<Eigen::Index>(pop.n());
  auto rank = [n](double q) {
    // Guard against q * n landing a hair above an integer.
    auto r = static_cast<Eigen::Index>(std::ceil(q * static_cast<double>(n) - 1e-9));
    return std::clamp<Eigen::Index>(r, 1, n);
  };
  const Eigen::Index lo_rank = rank(lower_q);
  const Eigen::Index hi_rank = rank(upper_q);

  Eigen::MatrixXd x = pop.covariates();
  std::vector<double> sorted(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < n; ++i) sorted[static_cast<std::size_t>(i)] = x(i, j);
    std::sort(sorted.begin(), sorted.end());
    const double lo = sorted[static_cast<std::size_t>(lo_rank - 1)];
    const double hi = sorted[static_cast<std::size_t>(hi_rank - 1)];
    for (Eigen::Index i = 0; i < n; ++i) x(i, j) = std::clamp(x(i, j), lo, hi);
  }
  return pop.with_covariates(std::move(x), pop.covariate_names());
}

LeverageReport leverage_scores(const Eigen::MatrixXd& covariates, const std::vector<std::string>& names) {
  const auto n = static_cast<double>(covariates.rows());
  const auto k = static_cast<double>(covariates.cols());
  LeverageReport report;
  report.min_sum_h32 = std::pow(k, 1.5) / std::sqrt(n);
  report.min_max_h = k / n;
  if (covariates.cols() == 0) {
    report.h = Eigen::VectorXd::Zero(covariates.rows());
    return report;
  }
  const CovariateMoments moments(covariates, names);
  report.h = moments.whiten(covariates).rowwise().squaredNorm() / (n - 1.0);
  report.sum_h32 = report.h.array().pow(1.5).sum();
  report.max_h = report.h.maxCoeff();
  return report;
}

LeverageReport leverage_scores(const FinitePopulation& pop) {
  return leverage_scores(pop.covariates(), pop.covariate_names());
}

}  // namespace rerand
