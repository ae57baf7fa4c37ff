#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace misalloc {

// Rows of the Markdown report. Each block is optional; absent blocks are
// left out of the rendered document.

struct ElasticityRow {
  std::string country;
  std::array<double, 5> value{};  // K, L, M, sum, K/L
  std::optional<std::array<double, 5>> se;
};

struct GevRow {
  double xi = 0, sigma = 0, mu = 0;
  std::optional<std::array<double, 3>> se;
  std::optional<double> mean;
};

struct ProductivityRow {
  std::string country;
  std::array<double, 4> delta{};
  std::optional<std::array<double, 4>> delta_se;
  std::optional<GevRow> gev;
};

// Values are fractions; rendered as percentages. Missing entries print "-".
struct S2Row {
  std::string country;
  std::vector<std::optional<double>> values;
};

struct LaborRow {
  std::string country;
  double T = 0;
  std::array<std::array<double, 2>, 3> ci{};  // 90, 95, 99
  std::size_t n = 0;
};

struct DidEntry {
  double att = 0, se = 0;
  std::string stars;  // significance marks as reported
};

struct DidColumn {
  std::string label;
  DidEntry overall;
  std::optional<DidEntry> pre;
  std::vector<std::pair<int, DidEntry>> years;
  std::size_t n = 0;
  std::vector<std::string> controls;
  std::string inference;
};

struct ReportData {
  std::string title = "Production function and misallocation report";
  std::vector<ElasticityRow> elasticities;
  std::vector<ProductivityRow> productivity;
  std::vector<S2Row> s2_total;         // K, L, M
  std::vector<S2Row> s2_channels;      // 3 inputs x 3 channels
  std::vector<S2Row> s2_channels_cov;  // same, with covariance terms
  std::vector<LaborRow> labor;
  std::optional<std::string> labor_subset;
  std::vector<DidColumn> did;
};

// Stars from a two-sided normal test of att/se (10%, 5%, 1%).
std::string normal_stars(double att, double se);

std::string render_report(const ReportData& d);

// Decision text for a labor test row.
std::string labor_decision(const LaborRow& r);

nlohmann::ordered_json to_json(const ElasticityRow& r);
nlohmann::ordered_json to_json(const ProductivityRow& r);
nlohmann::ordered_json to_json(const S2Row& r);
nlohmann::ordered_json to_json(const LaborRow& r);
nlohmann::ordered_json to_json(const DidColumn& c);
ElasticityRow elasticity_row_from(const nlohmann::json& j);
ProductivityRow productivity_row_from(const nlohmann::json& j);
S2Row s2_row_from(const nlohmann::json& j);
LaborRow labor_row_from(const nlohmann::json& j);
DidColumn did_column_from(const nlohmann::json& j);

}  // namespace misalloc
