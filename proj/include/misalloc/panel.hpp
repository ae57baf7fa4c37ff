#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace misalloc {

struct FirmYear {
  std::string firm_id;
  int year = 0;
  std::string sector;
  std::string country;
  std::optional<double> Y;
  std::optional<double> K;
  std::optional<double> L;
  std::optional<double> M;
  std::optional<double> wage_bill;
  std::optional<double> materials_cost;
  double output_price = 1.0;

  bool operator==(const FirmYear&) const = default;
};

enum class Variable { Y, K, L, M, WageBill, MaterialsCost };

Variable parse_variable(const std::string& name);
const char* variable_name(Variable v);
std::optional<double> get(const FirmYear& r, Variable v);
std::optional<double>& get_mut(FirmYear& r, Variable v);

enum class DropReason {
  MissingKey,
  Unparseable,
  NonPositiveLevel,
  NegativeCost,
  NonPositivePrice,
  ShortSector,
  DuplicateKey,
  WrongFieldCount,
};

const char* drop_reason_name(DropReason r);

struct DropReport {
  std::map<DropReason, std::size_t> counts;
  std::vector<std::pair<std::size_t, DropReason>> rows;  // (1-based data line, reason)

  void add(std::size_t line, DropReason r);
  std::size_t total() const;
  bool operator==(const DropReport&) const = default;
};

struct FirmRange {
  std::size_t begin;
  std::size_t end;
};

// Sorted by (firm_id, year) with unique keys. Immutable once built.
class FirmPanel {
 public:
  FirmPanel() = default;
  explicit FirmPanel(std::vector<FirmYear> records, int sector_level = 3);

  const std::vector<FirmYear>& records() const { return records_; }
  const FirmYear& operator[](std::size_t i) const { return records_[i]; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  int sector_level() const { return sector_level_; }
  std::pair<int, int> year_range() const;

  std::string sector_cell(std::size_t i) const;
  const std::vector<FirmRange>& firms() const { return firms_; }
  // Index of the same firm's record for year - 1, or -1.
  const std::vector<long>& lag_index() const { return lag_; }

  bool operator==(const FirmPanel& o) const {
    return sector_level_ == o.sector_level_ && records_ == o.records_;
  }

 private:
  std::vector<FirmYear> records_;
  int sector_level_ = 3;
  std::vector<FirmRange> firms_;
  std::vector<long> lag_;
};

struct ColumnMapping {
  std::string firm_id = "firm_id";
  std::string year = "year";
  std::string sector = "sector";
  std::string country = "country";
  std::string Y = "Y";
  std::string K = "K";
  std::string L = "L";
  std::string M = "M";
  std::string wage_bill = "wage_bill";
  std::string materials_cost = "materials_cost";
  std::string output_price = "output_price";
};

struct IngestResult {
  FirmPanel panel;
  DropReport report;
};

IngestResult ingest_csv(const std::string& path, const ColumnMapping& mapping = {},
                        int sector_level = 3);
IngestResult ingest_csv_text(const std::string& text, const ColumnMapping& mapping = {},
                             int sector_level = 3);
void write_csv(const FirmPanel& panel, const std::string& path);
std::string to_csv(const FirmPanel& panel);
std::string drop_report_json(const DropReport& report);

std::optional<double> construct_us_materials(double cogs, double xsga, double wage_bill,
                                             double depreciation);

FirmPanel productivity_sample(const FirmPanel& panel, const std::string& key_var);

std::vector<std::optional<double>> interpolate_gaps(
    const std::vector<std::optional<double>>& series);

// Interpolates each listed variable within firm, then drops records that
// still miss any listed variable.
FirmPanel clean_panel(const FirmPanel& panel, const std::string& key_var,
                      const std::vector<Variable>& required);

// Log variables of complete records, arranged for estimation kernels.
struct EstimationSample {
  std::vector<double> y, k, l, m, s;
  std::vector<double> revenue;    // P*Y
  std::vector<double> wage_bill;
  std::vector<long> lag;          // lag record index or -1
  std::vector<std::size_t> firm;  // firm ordinal
  std::size_t n_firms = 0;
  std::size_t size() const { return y.size(); }
};

EstimationSample make_sample(const FirmPanel& panel);

}  // namespace misalloc
