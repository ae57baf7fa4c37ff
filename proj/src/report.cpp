#include "misalloc/report.hpp"

#include <cmath>
#include <algorithm>
#include <cstdio>
#include <sstream>

#include "misalloc/common.hpp"

namespace misalloc {

namespace {

std::string printf_str(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

std::string f3(double x) { return printf_str("%.3f", x); }
std::string f2(double x) { return printf_str("%.2f", x); }
std::string g3(double x) { return printf_str("%#.3g", x); }
std::string pct(const std::optional<double>& x) {
  return x ? printf_str("%.2f", 100.0 * *x) + "%" : "-";
}

std::string thousands(std::size_t n) {
  std::string s = std::to_string(n);
  for (long i = static_cast<long>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

std::string row(const std::vector<std::string>& cells) {
  std::string s = "|";
  for (const auto& c : cells) s += " " + c + " |";
  return s + "\n";
}

std::string rule(std::size_t n) {
  std::string s = "|";
  for (std::size_t i = 0; i < n; ++i) s += i == 0 ? "---|" : "---:|";
  return s + "\n";
}

// Two decimals with thousands separators in the integer part.
std::string f2k(double x) {
  std::string s = f2(x);
  const std::size_t start = s[0] == '-' ? 1 : 0;
  for (long i = static_cast<long>(s.find('.')) - 3; i > static_cast<long>(start); i -= 3)
    s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

std::string ci(const std::array<double, 2>& c) { return "[" + f2k(c[0]) + " ; " + f2k(c[1]) + "]"; }

template <class T>
nlohmann::ordered_json opt(const std::optional<T>& x) {
  return x ? nlohmann::ordered_json(*x) : nlohmann::ordered_json(nullptr);
}

template <class T>
std::optional<T> opt_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

std::string s2_block(const std::string& heading, const std::vector<S2Row>& rows,
                     const std::vector<std::string>& cols, const std::string& note) {
  std::ostringstream o;
  o << "## " << heading << "\n\n";
  std::vector<std::string> h{"Country"};
  h.insert(h.end(), cols.begin(), cols.end());
  o << row(h) << rule(h.size());
  for (const auto& r : rows) {
    std::vector<std::string> c{r.country};
    for (const auto& v : r.values) c.push_back(pct(v));
    o << row(c);
  }
  o << "\n" << note << "\n\n";
  return o.str();
}

}  // namespace

std::string normal_stars(double att, double se) {
  if (!(se > 0)) return "";
  const double z = std::fabs(att / se);
  if (z > 2.5758293035489004) return "***";
  if (z > 1.959963984540054) return "**";
  if (z > 1.6448536269514722) return "*";
  return "";
}

std::string labor_decision(const LaborRow& r) {
  auto outside = [](const std::array<double, 2>& c) { return !(c[0] <= 0 && 0 <= c[1]); };
  if (outside(r.ci[2])) return "rejected at 1%";
  if (outside(r.ci[1])) return "rejected at 5%";
  if (outside(r.ci[0])) return "rejected at 10%";
  return "cannot be rejected";
}

std::string render_report(const ReportData& d) {
  std::ostringstream o;
  o << "# " << d.title << "\n\n";
  if (!d.elasticities.empty()) {
    o << "## Average output elasticities\n\n";
    std::vector<std::string> h{"Country", "Capital", "Labor", "Intermediates", "Sum", "Capital/Labor"};
    o << row(h) << rule(h.size());
    bool any_se = false;
    for (const auto& r : d.elasticities) {
      std::vector<std::string> c{r.country};
      for (double v : r.value) c.push_back(f3(v));
      o << row(c);
      if (r.se) {
        any_se = true;
        std::vector<std::string> s{""};
        for (double v : *r.se) s.push_back("(" + f3(v) + ")");
        o << row(s);
      }
    }
    o << "\nAverages across firms and years of the estimated elasticities, their sum and the "
         "capital/labor ratio of the averages.";
    if (any_se) o << " Bootstrap standard errors in parentheses.";
    o << "\n\n";
  }
  if (!d.productivity.empty()) {
    o << "## Productivity estimates\n\n";
    std::vector<std::string> h{"Country", "δ0", "δ1", "δ2", "δ3", "ξ", "σ", "μ", "GEV mean"};
    o << row(h) << rule(h.size());
    for (const auto& r : d.productivity) {
      std::vector<std::string> c{r.country};
      for (double v : r.delta) c.push_back(f3(v));
      if (r.gev) {
        c.push_back(f3(r.gev->xi));
        c.push_back(f3(r.gev->sigma));
        c.push_back(f3(r.gev->mu));
        c.push_back(r.gev->mean ? f2(*r.gev->mean) : "-");
      } else {
        c.insert(c.end(), {"-", "-", "-", "-"});
      }
      o << row(c);
      if (r.delta_se || (r.gev && r.gev->se)) {
        std::vector<std::string> s{""};
        for (int j = 0; j < 4; ++j)
          s.push_back(r.delta_se ? "(" + f3((*r.delta_se)[static_cast<std::size_t>(j)]) + ")" : "");
        for (int j = 0; j < 3; ++j)
          s.push_back(r.gev && r.gev->se ? "(" + f3((*r.gev->se)[static_cast<std::size_t>(j)]) + ")"
                                          : "");
        s.push_back("");
        o << row(s);
      }
    }
    o << "\nMarkov process coefficients of persistent productivity and a GEV(ξ, σ, μ) fit to "
         "firm-year TFP levels. The GEV mean is shown only when 0 < ξ < 1.\n\n";
  }
  const std::string negative = "Negative values are uninformative.";
  if (!d.s2_total.empty())
    o << s2_block("S² of marginal product dispersion", d.s2_total, {"Capital", "Labor", "Materials"},
                  "Share of sector-time marginal product dispersion explained by TFP volatility. " +
                      negative);
  const std::vector<std::string> chan{"K: ω₋₁", "K: η", "K: Δε", "L: ω₋₁", "L: η",
                                      "L: Δε",  "M: ω₋₁", "M: η", "M: Δε"};
  if (!d.s2_channels.empty())
    o << s2_block("S² by productivity channel", d.s2_channels, chan,
                  "TFP growth split into past productivity, ex-ante and ex-post shocks. " + negative);
  if (!d.s2_channels_cov.empty())
    o << s2_block("S² by productivity channel with covariances", d.s2_channels_cov, chan,
                  "As above, adding sector-time covariances between channels. " + negative);
  if (!d.labor.empty()) {
    o << "## Flexible labor test";
    if (d.labor_subset) o << " (" << *d.labor_subset << ")";
    o << "\n\n";
    std::vector<std::string> h{"Country", "T", "90% CI", "95% CI", "99% CI", "N", "Flexible labor"};
    o << row(h) << rule(h.size());
    for (const auto& r : d.labor)
      o << row({r.country, f2(r.T), ci(r.ci[0]), ci(r.ci[1]), ci(r.ci[2]), thousands(r.n),
                labor_decision(r)});
    o << "\nT is the sample mean of P·Y·elas_L − wL. Intervals from the two-stage bootstrap.\n\n";
  }
  if (!d.did.empty()) {
    o << "## Difference-in-differences\n\n";
    std::vector<std::string> h{""};
    for (std::size_t i = 0; i < d.did.size(); ++i)
      h.push_back("(" + std::to_string(i + 1) + ") " + d.did[i].label);
    o << row(h) << rule(h.size());
    auto entry_rows = [&](const std::string& name, auto get) {
      std::vector<std::string> a{name}, s{""};
      for (const auto& c : d.did) {
        std::optional<DidEntry> e = get(c);
        a.push_back(e ? g3(e->att) + e->stars : "-");
        s.push_back(e ? "(" + g3(e->se) + ")" : "");
      }
      o << row(a) << row(s);
    };
    entry_rows("ATT", [](const DidColumn& c) { return std::optional<DidEntry>(c.overall); });
    entry_rows("ATT Pre-treatment", [](const DidColumn& c) { return c.pre; });
    std::vector<int> years;
    for (const auto& c : d.did)
      for (const auto& [y, e] : c.years)
        if (std::find(years.begin(), years.end(), y) == years.end()) years.push_back(y);
    std::sort(years.begin(), years.end());
    for (int y : years)
      entry_rows("ATT " + std::to_string(y), [y](const DidColumn& c) {
        for (const auto& [yy, e] : c.years)
          if (yy == y) return std::optional<DidEntry>(e);
        return std::optional<DidEntry>();
      });
    std::vector<std::string> n{"N"}, ctl{"Controls"};
    for (const auto& c : d.did) {
      n.push_back(thousands(c.n));
      std::string s;
      for (const auto& x : c.controls) s += (s.empty() ? "" : ", ") + x;
      ctl.push_back(s.empty() ? "none" : s);
    }
    o << row(n) << row(ctl);
    o << "\nDynamic ATT against never-treated units with the last pre-treatment year as base. "
         "Standard errors in parentheses.";
    std::vector<std::string> infs;
    for (const auto& c : d.did)
      if (!c.inference.empty() && std::find(infs.begin(), infs.end(), c.inference) == infs.end())
        infs.push_back(c.inference);
    for (const auto& s : infs) o << " Inference: " << s << ".";
    o << "\n\n";
  }
  return o.str();
}

nlohmann::ordered_json to_json(const ElasticityRow& r) {
  return {{"country", r.country}, {"value", r.value}, {"se", opt(r.se)}};
}

nlohmann::ordered_json to_json(const ProductivityRow& r) {
  nlohmann::ordered_json j{{"country", r.country}, {"delta", r.delta}, {"delta_se", opt(r.delta_se)}};
  if (r.gev)
    j["gev"] = {{"xi", r.gev->xi}, {"sigma", r.gev->sigma}, {"mu", r.gev->mu},
                {"se", opt(r.gev->se)}, {"mean", opt(r.gev->mean)}};
  else
    j["gev"] = nullptr;
  return j;
}

nlohmann::ordered_json to_json(const S2Row& r) {
  nlohmann::ordered_json v = nlohmann::ordered_json::array();
  for (const auto& x : r.values) v.push_back(opt(x));
  return {{"country", r.country}, {"values", v}};
}

nlohmann::ordered_json to_json(const LaborRow& r) {
  return {{"country", r.country}, {"T", r.T}, {"ci90", r.ci[0]}, {"ci95", r.ci[1]},
          {"ci99", r.ci[2]}, {"n", r.n}, {"decision", labor_decision(r)}};
}

namespace {
nlohmann::ordered_json entry_json(const DidEntry& e) {
  return {{"att", e.att}, {"se", e.se}, {"stars", e.stars}};
}
DidEntry entry_from(const nlohmann::json& j) {
  return {j.at("att").get<double>(), j.at("se").get<double>(), j.at("stars").get<std::string>()};
}
}  // namespace

nlohmann::ordered_json to_json(const DidColumn& c) {
  nlohmann::ordered_json years = nlohmann::ordered_json::array();
  for (const auto& [y, e] : c.years) {
    auto j = entry_json(e);
    j["year"] = y;
    years.push_back(j);
  }
  return {{"label", c.label},
          {"overall", entry_json(c.overall)},
          {"pre", c.pre ? entry_json(*c.pre) : nlohmann::ordered_json(nullptr)},
          {"years", years},
          {"n", c.n},
          {"controls", c.controls},
          {"inference", c.inference}};
}

ElasticityRow elasticity_row_from(const nlohmann::json& j) {
  ElasticityRow r;
  r.country = j.at("country").get<std::string>();
  r.value = j.at("value").get<std::array<double, 5>>();
  r.se = opt_from<std::array<double, 5>>(j, "se");
  return r;
}

ProductivityRow productivity_row_from(const nlohmann::json& j) {
  ProductivityRow r;
  r.country = j.at("country").get<std::string>();
  r.delta = j.at("delta").get<std::array<double, 4>>();
  r.delta_se = opt_from<std::array<double, 4>>(j, "delta_se");
  if (j.contains("gev") && !j.at("gev").is_null()) {
    const auto& g = j.at("gev");
    GevRow v;
    v.xi = g.at("xi").get<double>();
    v.sigma = g.at("sigma").get<double>();
    v.mu = g.at("mu").get<double>();
    v.se = opt_from<std::array<double, 3>>(g, "se");
    v.mean = opt_from<double>(g, "mean");
    r.gev = v;
  }
  return r;
}

S2Row s2_row_from(const nlohmann::json& j) {
  S2Row r;
  r.country = j.at("country").get<std::string>();
  for (const auto& v : j.at("values"))
    r.values.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
  return r;
}

LaborRow labor_row_from(const nlohmann::json& j) {
  LaborRow r;
  r.country = j.at("country").get<std::string>();
  r.T = j.at("T").get<double>();
  r.ci[0] = j.at("ci90").get<std::array<double, 2>>();
  r.ci[1] = j.at("ci95").get<std::array<double, 2>>();
  r.ci[2] = j.at("ci99").get<std::array<double, 2>>();
  r.n = j.at("n").get<std::size_t>();
  return r;
}

DidColumn did_column_from(const nlohmann::json& j) {
  DidColumn c;
  c.label = j.at("label").get<std::string>();
  c.overall = entry_from(j.at("overall"));
  if (!j.at("pre").is_null()) c.pre = entry_from(j.at("pre"));
  for (const auto& y : j.at("years")) c.years.emplace_back(y.at("year").get<int>(), entry_from(y));
  c.n = j.at("n").get<std::size_t>();
  c.controls = j.at("controls").get<std::vector<std::string>>();
  c.inference = j.at("inference").get<std::string>();
  return c;
}

}  // namespace misalloc
