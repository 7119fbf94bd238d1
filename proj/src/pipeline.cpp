#include "gestalt/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include "gestalt/chart_io.hpp"
#include "gestalt/error.hpp"

namespace gestalt {

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<bool> parse_flag(std::string_view s) {
  s = trim(s);
  if (s == "1" || s == "true" || s == "TRUE" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "FALSE" || s == "no") return false;
  throw Error(ErrorCode::kParse, "bad boolean '" + std::string(s) + "'");
}

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

constexpr std::string_view kRequired[] = {"pregnancy_id", "exam_date", "fa_days", "crl_mm",
                                          "source"};
constexpr std::string_view kOptional[] = {"weight", "regular_cycles"};

}  // namespace

LoadResult parse_cohort_csv(std::string_view text, const LoadOptions& opts,
                            std::string provenance) {
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    lines.push_back(text.substr(start, nl - start));
    start = nl + 1;
  }
  std::size_t header_line = 0;
  while (header_line < lines.size() && trim(lines[header_line]).empty()) ++header_line;
  if (header_line == lines.size()) throw Error(ErrorCode::kLoad, "cohort CSV has no header row");

  std::map<std::string, std::size_t, std::less<>> column;
  const auto header = split_csv_line(trim(lines[header_line]));
  for (std::size_t i = 0; i < header.size(); ++i) {
    const auto name = std::string(trim(header[i]));
    const bool known =
        std::find(std::begin(kRequired), std::end(kRequired), name) != std::end(kRequired) ||
        std::find(std::begin(kOptional), std::end(kOptional), name) != std::end(kOptional);
    if (!known) throw Error(ErrorCode::kLoad, "unknown column '" + name + "' in header");
    if (!column.emplace(name, i).second) {
      throw Error(ErrorCode::kLoad, "duplicate column '" + name + "' in header");
    }
  }
  for (auto req : kRequired) {
    if (!column.contains(req)) {
      throw Error(ErrorCode::kLoad, "missing required column '" + std::string(req) + "'");
    }
  }

  LoadResult result;
  std::vector<Measurement> rows;
  std::vector<std::string> row_errors;
  for (std::size_t li = header_line + 1; li < lines.size(); ++li) {
    const auto line = trim(lines[li]);
    if (line.empty()) continue;
    const auto row_no = li + 1;
    try {
      const auto fields = split_csv_line(line);
      if (fields.size() != header.size()) {
        throw Error(ErrorCode::kParse, "expected " + std::to_string(header.size()) +
                                           " fields, got " + std::to_string(fields.size()));
      }
      auto get = [&](std::string_view name) { return trim(fields[column.find(name)->second]); };
      auto number = [&](std::string_view name) {
        auto v = parse_double(get(name));
        if (!v) {
          throw Error(ErrorCode::kParse, "column " + std::string(name) + ": '" +
                                             std::string(get(name)) + "' is not a number");
        }
        return *v;
      };
      Measurement m;
      m.pregnancy_id = std::string(get("pregnancy_id"));
      if (m.pregnancy_id.empty()) throw Error(ErrorCode::kParse, "empty pregnancy_id");
      m.exam_date = parse_date(get("exam_date"));
      m.fa = number("fa_days");
      m.crl = number("crl_mm");
      m.source = parse_source(get("source"));
      if (column.contains("weight") && !get("weight").empty()) m.weight = number("weight");
      if (column.contains("regular_cycles") && !get("regular_cycles").empty()) {
        m.regular_cycles = parse_flag(get("regular_cycles"));
      }
      validate(m);
      rows.push_back(std::move(m));
    } catch (const Error& e) {
      row_errors.push_back("row " + std::to_string(row_no) + ": " + e.what());
    }
  }

  if (!row_errors.empty()) {
    if (opts.strict) {
      std::string msg = std::to_string(row_errors.size()) + " invalid row(s):";
      for (const auto& e : row_errors) msg += "\n  " + e;
      throw Error(ErrorCode::kLoad, msg);
    }
    result.rejected_rows = row_errors.size();
    for (auto& e : row_errors) result.warnings.push_back("skipped " + e);
  }
  if (rows.empty()) result.warnings.push_back("cohort is empty");
  result.cohort = Cohort(std::move(rows), std::move(provenance));
  return result;
}

LoadResult load_cohort(const std::filesystem::path& path, const LoadOptions& opts) {
  return parse_cohort_csv(read_file(path), opts, "loaded from " + path.string());
}

std::string cohort_to_csv(const Cohort& cohort) {
  const bool flags = std::any_of(cohort.begin(), cohort.end(),
                                 [](const Measurement& m) { return m.regular_cycles.has_value(); });
  std::string out = "pregnancy_id,exam_date,fa_days,crl_mm,source,weight";
  if (flags) out += ",regular_cycles";
  out += '\n';
  for (const auto& m : cohort) {
    out += quote_if_needed(m.pregnancy_id) + ',' + format_date(m.exam_date) + ',' +
           format_number(m.fa) + ',' + format_number(m.crl) + ',' +
           std::string(to_string(m.source)) + ',' + format_number(m.weight);
    if (flags) out += m.regular_cycles ? (*m.regular_cycles ? ",1" : ",0") : ",";
    out += '\n';
  }
  return out;
}

void save_cohort(const Cohort& cohort, const std::filesystem::path& path) {
  write_file(path, cohort_to_csv(cohort));
}

Cohort dedup_first_exam(const Cohort& cohort) {
  std::map<std::string_view, std::size_t> best;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& m = cohort[i];
    auto [it, inserted] = best.emplace(m.pregnancy_id, i);
    if (inserted) continue;
    const auto& cur = cohort[it->second];
    if (m.exam_date < cur.exam_date || (m.exam_date == cur.exam_date && m.crl < cur.crl)) {
      it->second = i;
    }
  }
  std::vector<std::size_t> keep;
  keep.reserve(best.size());
  for (const auto& [_, i] : best) keep.push_back(i);
  std::sort(keep.begin(), keep.end());
  return cohort.subset(keep);
}

Cohort select_eligible(const Cohort& cohort, double max_crl, bool require_regular_cycles) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto& m = cohort[i];
    if (!(m.crl < max_crl)) continue;
    if (require_regular_cycles && m.regular_cycles && !*m.regular_cycles) continue;
    keep.push_back(i);
  }
  return cohort.subset(keep);
}

long round_half_away(double v) { return std::lround(v); }

TrimReport trim_outliers(const Cohort& cohort, const BasisSpec& basis, double lower_frac,
                         double upper_frac, const RobustOptions& robust) {
  if (lower_frac < 0.0 || upper_frac < 0.0 || !(lower_frac + upper_frac < 0.5)) {
    throw Error(ErrorCode::kInvalidArgument,
                "trim fractions must be non-negative and sum below 0.5");
  }
  const std::size_t n = cohort.size();
  TrimReport report{.n_in = n};
  const auto n_low = static_cast<std::size_t>(round_half_away(lower_frac * static_cast<double>(n)));
  const auto n_high =
      static_cast<std::size_t>(round_half_away(upper_frac * static_cast<double>(n)));
  if (n_low + n_high == 0) {
    report.kept = cohort;
    return report;
  }

  const auto fit = fit_robust(cohort, basis, default_response(basis.covariate()), robust);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return fit.residuals[a] < fit.residuals[b];
  });

  std::vector<bool> drop(n, false);
  for (std::size_t r = 0; r < n_low; ++r) {
    drop[order[r]] = true;
    report.removed_low_ids.push_back(cohort[order[r]].pregnancy_id);
  }
  for (std::size_t r = 0; r < n_high; ++r) {
    const auto i = order[n - 1 - r];
    drop[i] = true;
    report.removed_high_ids.push_back(cohort[i].pregnancy_id);
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < n; ++i) {
    if (!drop[i]) keep.push_back(i);
  }
  const double dn = static_cast<double>(n);
  report.removed_low = {n_low, static_cast<double>(n_low) / dn};
  report.removed_high = {n_high, static_cast<double>(n_high) / dn};
  report.total_removed_fraction = report.removed_low.fraction + report.removed_high.fraction;
  report.kept = cohort.subset(keep);
  return report;
}

nlohmann::json trim_report_to_json(const TrimReport& report) {
  nlohmann::json kept_ids = nlohmann::json::array();
  for (const auto& m : report.kept) kept_ids.push_back(m.pregnancy_id);
  return {
      {"n_in", report.n_in},
      {"removed_low",
       {{"count", report.removed_low.count},
        {"fraction", report.removed_low.fraction},
        {"ids", report.removed_low_ids}}},
      {"removed_high",
       {{"count", report.removed_high.count},
        {"fraction", report.removed_high.fraction},
        {"ids", report.removed_high_ids}}},
      {"total_removed_fraction", report.total_removed_fraction},
      {"kept_ids", std::move(kept_ids)},
  };
}

Reweighted reweight_split(const Cohort& cohort, double threshold_crl) {
  Reweighted out;
  for (const auto& m : cohort) (m.crl < threshold_crl ? out.n_low : out.n_high)++;
  if (out.n_low == 0 || out.n_high == 0) {
    std::ostringstream msg;
    msg << "cannot reweight around CRL " << threshold_crl << " mm: " << out.n_low
        << " record(s) below and " << out.n_high << " at or above";
    throw Error(ErrorCode::kReweight, msg.str());
  }
  const double n = static_cast<double>(cohort.size());
  out.low_weight = n / (2.0 * static_cast<double>(out.n_low));
  out.high_weight = n / (2.0 * static_cast<double>(out.n_high));
  std::vector<double> w;
  w.reserve(cohort.size());
  for (const auto& m : cohort) w.push_back(m.crl < threshold_crl ? out.low_weight : out.high_weight);
  if (std::max(out.low_weight, out.high_weight) > kImbalanceWarningWeight) {
    std::ostringstream msg;
    msg << "extreme imbalance around CRL " << threshold_crl << " mm (" << out.n_low << " vs "
        << out.n_high << "); largest weight " << std::max(out.low_weight, out.high_weight);
    out.warnings.push_back(msg.str());
  }
  out.cohort = cohort.with_weights(w);
  return out;
}

}  // namespace gestalt
