#include "misalloc/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "misalloc/common.hpp"
#include "misalloc/csv.hpp"

namespace misalloc {

Variable parse_variable(const std::string& name) {
  if (name == "Y") return Variable::Y;
  if (name == "K") return Variable::K;
  if (name == "L") return Variable::L;
  if (name == "M") return Variable::M;
  if (name == "wage_bill") return Variable::WageBill;
  if (name == "materials_cost") return Variable::MaterialsCost;
  throw ValidationError("unknown panel variable: " + name);
}

const char* variable_name(Variable v) {
  switch (v) {
    case Variable::Y: return "Y";
    case Variable::K: return "K";
    case Variable::L: return "L";
    case Variable::M: return "M";
    case Variable::WageBill: return "wage_bill";
    case Variable::MaterialsCost: return "materials_cost";
  }
  return "?";
}

std::optional<double> get(const FirmYear& r, Variable v) {
  return get_mut(const_cast<FirmYear&>(r), v);
}

std::optional<double>& get_mut(FirmYear& r, Variable v) {
  switch (v) {
    case Variable::Y: return r.Y;
    case Variable::K: return r.K;
    case Variable::L: return r.L;
    case Variable::M: return r.M;
    case Variable::WageBill: return r.wage_bill;
    case Variable::MaterialsCost: return r.materials_cost;
  }
  return r.Y;
}

const char* drop_reason_name(DropReason r) {
  switch (r) {
    case DropReason::MissingKey: return "missing_key";
    case DropReason::Unparseable: return "unparseable";
    case DropReason::NonPositiveLevel: return "non_positive_level";
    case DropReason::NegativeCost: return "negative_cost";
    case DropReason::NonPositivePrice: return "non_positive_price";
    case DropReason::ShortSector: return "short_sector";
    case DropReason::DuplicateKey: return "duplicate_key";
    case DropReason::WrongFieldCount: return "wrong_field_count";
  }
  return "?";
}

void DropReport::add(std::size_t line, DropReason r) {
  ++counts[r];
  rows.emplace_back(line, r);
}

std::size_t DropReport::total() const { return rows.size(); }

static bool valid_sector(const std::string& s, int level) {
  if (static_cast<int>(s.size()) < level) return false;
  return std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

FirmPanel::FirmPanel(std::vector<FirmYear> records, int sector_level)
    : records_(std::move(records)), sector_level_(sector_level) {
  if (sector_level_ < 1) throw ValidationError("sector_level must be positive");
  std::sort(records_.begin(), records_.end(), [](const FirmYear& a, const FirmYear& b) {
    if (a.firm_id != b.firm_id) return a.firm_id < b.firm_id;
    return a.year < b.year;
  });
  lag_.assign(records_.size(), -1);
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (!valid_sector(r.sector, sector_level_))
      throw ValidationError("sector '" + r.sector + "' shorter than sector level for firm " +
                            r.firm_id);
    if (i == 0 || records_[i - 1].firm_id != r.firm_id) {
      firms_.push_back({i, i + 1});
    } else {
      if (records_[i - 1].year == r.year)
        throw ValidationError("duplicate (firm_id, year): " + r.firm_id + ", " +
                              std::to_string(r.year));
      firms_.back().end = i + 1;
      if (records_[i - 1].year == r.year - 1) lag_[i] = static_cast<long>(i - 1);
    }
  }
}

std::pair<int, int> FirmPanel::year_range() const {
  if (records_.empty()) return {0, 0};
  int lo = records_.front().year, hi = lo;
  for (const auto& r : records_) {
    lo = std::min(lo, r.year);
    hi = std::max(hi, r.year);
  }
  return {lo, hi};
}

std::string FirmPanel::sector_cell(std::size_t i) const {
  return records_[i].sector.substr(0, static_cast<std::size_t>(sector_level_));
}

namespace {

enum class ParseStatus { Ok, Missing, Bad };

ParseStatus parse_number(const std::string& raw, double& out) {
  std::string s = raw;
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t b = 0;
  while (b < s.size() && (s[b] == ' ' || s[b] == '\t')) ++b;
  s = s.substr(b);
  if (s.empty() || s == "NA" || s == "NaN" || s == "nan") return ParseStatus::Missing;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto res = std::from_chars(first, s.data() + s.size(), out);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(out))
    return ParseStatus::Bad;
  return ParseStatus::Ok;
}

}  // namespace

IngestResult ingest_csv_text(const std::string& text, const ColumnMapping& mapping,
                             int sector_level) {
  auto rows = parse_csv(text);
  if (rows.empty()) throw ValidationError("CSV has no header row");
  const auto& header = rows.front();
  auto find = [&](const std::string& name, bool mandatory) -> long {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<long>(i);
    if (mandatory) throw ValidationError("missing mandatory column: " + name);
    return -1;
  };
  long c_id = find(mapping.firm_id, true), c_year = find(mapping.year, true),
       c_sector = find(mapping.sector, true), c_country = find(mapping.country, false);
  long c_y = find(mapping.Y, true), c_k = find(mapping.K, true), c_l = find(mapping.L, true),
       c_m = find(mapping.M, true), c_w = find(mapping.wage_bill, true),
       c_mc = find(mapping.materials_cost, true), c_p = find(mapping.output_price, false);

  IngestResult result;
  std::vector<FirmYear> kept;
  std::set<std::pair<std::string, int>> seen;
  for (std::size_t line = 1; line < rows.size(); ++line) {
    const auto& row = rows[line];
    if (row.size() != header.size()) {
      result.report.add(line, DropReason::WrongFieldCount);
      continue;
    }
    FirmYear r;
    r.firm_id = row[c_id];
    r.sector = row[c_sector];
    if (c_country >= 0) r.country = row[c_country];
    if (r.firm_id.empty() || row[c_year].empty()) {
      result.report.add(line, DropReason::MissingKey);
      continue;
    }
    double yr = 0;
    if (parse_number(row[c_year], yr) != ParseStatus::Ok || yr != std::floor(yr)) {
      result.report.add(line, DropReason::Unparseable);
      continue;
    }
    r.year = static_cast<int>(yr);
    bool bad = false;
    auto field = [&](long col, std::optional<double>& dst) {
      double v = 0;
      auto st = parse_number(row[col], v);
      if (st == ParseStatus::Bad) bad = true;
      if (st == ParseStatus::Ok) dst = v;
    };
    field(c_y, r.Y);
    field(c_k, r.K);
    field(c_l, r.L);
    field(c_m, r.M);
    field(c_w, r.wage_bill);
    field(c_mc, r.materials_cost);
    std::optional<double> price;
    if (c_p >= 0) field(c_p, price);
    if (bad) {
      result.report.add(line, DropReason::Unparseable);
      continue;
    }
    if ((r.Y && *r.Y <= 0) || (r.K && *r.K <= 0) || (r.L && *r.L <= 0) || (r.M && *r.M <= 0)) {
      result.report.add(line, DropReason::NonPositiveLevel);
      continue;
    }
    if ((r.wage_bill && *r.wage_bill < 0) || (r.materials_cost && *r.materials_cost < 0)) {
      result.report.add(line, DropReason::NegativeCost);
      continue;
    }
    if (price) {
      if (*price <= 0) {
        result.report.add(line, DropReason::NonPositivePrice);
        continue;
      }
      r.output_price = *price;
    }
    if (!valid_sector(r.sector, sector_level)) {
      result.report.add(line, DropReason::ShortSector);
      continue;
    }
    if (!seen.insert({r.firm_id, r.year}).second) {
      result.report.add(line, DropReason::DuplicateKey);
      continue;
    }
    kept.push_back(std::move(r));
  }
  result.panel = FirmPanel(std::move(kept), sector_level);
  return result;
}

IngestResult ingest_csv(const std::string& path, const ColumnMapping& mapping,
                        int sector_level) {
  return ingest_csv_text(read_file(path), mapping, sector_level);
}

std::string to_csv(const FirmPanel& panel) {
  std::ostringstream out;
  out << "firm_id,year,sector,country,Y,K,L,M,wage_bill,materials_cost,output_price\n";
  for (const auto& r : panel.records()) {
    out << csv_field(r.firm_id) << ',' << r.year << ',' << csv_field(r.sector) << ','
        << csv_field(r.country) << ',' << fmt(r.Y) << ',' << fmt(r.K) << ',' << fmt(r.L) << ','
        << fmt(r.M) << ',' << fmt(r.wage_bill) << ',' << fmt(r.materials_cost) << ','
        << fmt(r.output_price) << '\n';
  }
  return out.str();
}

void write_csv(const FirmPanel& panel, const std::string& path) {
  write_file(path, to_csv(panel));
}

std::string drop_report_json(const DropReport& report) {
  nlohmann::ordered_json j;
  j["total"] = report.total();
  nlohmann::ordered_json counts = nlohmann::ordered_json::object();
  for (const auto& [reason, n] : report.counts) counts[drop_reason_name(reason)] = n;
  j["counts"] = counts;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& [line, reason] : report.rows)
    rows.push_back({{"line", line}, {"reason", drop_reason_name(reason)}});
  j["rows"] = rows;
  return j.dump(2) + "\n";
}

std::optional<double> construct_us_materials(double cogs, double xsga, double wage_bill,
                                             double depreciation) {
  double v = cogs + xsga - wage_bill - depreciation;
  if (v <= 0) return std::nullopt;
  return v;
}

FirmPanel productivity_sample(const FirmPanel& panel, const std::string& key_var) {
  Variable v = parse_variable(key_var);
  std::vector<FirmYear> kept;
  for (const auto& f : panel.firms()) {
    std::size_t present = 0, total = f.end - f.begin;
    for (std::size_t i = f.begin; i < f.end; ++i)
      if (get(panel[i], v)) ++present;
    if (present >= 2 && 2 * present >= total)
      kept.insert(kept.end(), panel.records().begin() + f.begin,
                  panel.records().begin() + f.end);
  }
  return FirmPanel(std::move(kept), panel.sector_level());
}

std::vector<std::optional<double>> interpolate_gaps(
    const std::vector<std::optional<double>>& series) {
  std::vector<std::optional<double>> out = series;
  long prev = -1;
  for (long i = 0; i < static_cast<long>(series.size()); ++i) {
    if (!series[i]) continue;
    if (prev >= 0 && i - prev > 1) {
      if (i - prev - 1 > 3) return std::vector<std::optional<double>>(series.size());
      double a = *series[prev], b = *series[i];
      for (long j = prev + 1; j < i; ++j)
        out[j] = a + (b - a) * static_cast<double>(j - prev) / static_cast<double>(i - prev);
    }
    prev = i;
  }
  return out;
}

FirmPanel clean_panel(const FirmPanel& panel, const std::string& key_var,
                      const std::vector<Variable>& required) {
  FirmPanel sample = productivity_sample(panel, key_var);
  std::vector<FirmYear> recs = sample.records();
  for (const auto& f : sample.firms()) {
    int y0 = recs[f.begin].year, y1 = recs[f.end - 1].year;
    for (Variable v : required) {
      std::vector<std::optional<double>> series(static_cast<std::size_t>(y1 - y0 + 1));
      for (std::size_t i = f.begin; i < f.end; ++i) series[recs[i].year - y0] = get(recs[i], v);
      auto filled = interpolate_gaps(series);
      for (std::size_t i = f.begin; i < f.end; ++i) get_mut(recs[i], v) = filled[recs[i].year - y0];
    }
  }
  std::vector<FirmYear> out;
  for (auto& r : recs) {
    bool ok = true;
    for (Variable v : required) {
      auto x = get(r, v);
      if (!x) ok = false;
      else if (v == Variable::WageBill ? *x < 0 : *x <= 0) ok = false;
    }
    if (ok) out.push_back(std::move(r));
  }
  return FirmPanel(std::move(out), panel.sector_level());
}

EstimationSample make_sample(const FirmPanel& panel) {
  EstimationSample s;
  std::size_t n = panel.size();
  s.y.resize(n); s.k.resize(n); s.l.resize(n); s.m.resize(n); s.s.resize(n);
  s.revenue.resize(n); s.wage_bill.resize(n); s.firm.resize(n);
  s.lag = panel.lag_index();
  s.n_firms = panel.firms().size();
  for (std::size_t f = 0; f < panel.firms().size(); ++f)
    for (std::size_t i = panel.firms()[f].begin; i < panel.firms()[f].end; ++i) s.firm[i] = f;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = panel[i];
    if (!r.Y || !r.K || !r.L || !r.M || !r.wage_bill || !r.materials_cost ||
        *r.materials_cost <= 0)
      throw ValidationError("incomplete record for estimation: firm " + r.firm_id + " year " +
                            std::to_string(r.year));
    s.y[i] = std::log(*r.Y);
    s.k[i] = std::log(*r.K);
    s.l[i] = std::log(*r.L);
    s.m[i] = std::log(*r.M);
    s.revenue[i] = r.output_price * *r.Y;
    s.s[i] = std::log(*r.materials_cost / s.revenue[i]);
    s.wage_bill[i] = *r.wage_bill;
  }
  return s;
}

}  // namespace misalloc
