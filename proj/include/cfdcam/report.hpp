#pragma once

#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "cfdcam/error.hpp"
#include "cfdcam/metrics.hpp"

namespace cfdcam {

struct ReportRow {
  std::string dataset;
  std::string modality;
  std::string method;
  SummaryStat dice;
  SummaryStat iou;
  SummaryStat hd95;
  bool failed = false;
  std::string error;
};

/// Rows keyed by (dataset, modality, method), kept in insertion order.
struct BenchmarkReport {
  std::string title;
  std::vector<ReportRow> rows;

  void add(ReportRow row) {
    for (const auto& r : rows)
      if (r.dataset == row.dataset && r.modality == row.modality && r.method == row.method)
        throw ValidationError("report: duplicate row " + row.dataset + "/" + row.modality + "/" + row.method);
    rows.push_back(std::move(row));
  }
  bool any_failed() const {
    for (const auto& r : rows)
      if (r.failed) return true;
    return false;
  }
};

enum class ReportFormat { csv, markdown };
enum class MetricColumn { dice, iou, hd95 };

inline const SummaryStat& column_stat(const ReportRow& r, MetricColumn c) {
  switch (c) {
    case MetricColumn::dice: return r.dice;
    case MetricColumn::iou: return r.iou;
    case MetricColumn::hd95: return r.hd95;
  }
  return r.dice;
}

/// Marks the best non-failed row of each (dataset, modality) group in one
/// column: highest mean for Dice and IoU, lowest for HD95. Ties are all marked.
inline std::vector<bool> best_in_column(const BenchmarkReport& report, MetricColumn column) {
  const bool higher = column != MetricColumn::hd95;
  std::map<std::pair<std::string, std::string>, double> best;
  for (const auto& r : report.rows) {
    if (r.failed) continue;
    const double v = column_stat(r, column).mean;
    const auto key = std::make_pair(r.dataset, r.modality);
    auto it = best.find(key);
    if (it == best.end() || (higher ? v > it->second : v < it->second)) best[key] = v;
  }
  std::vector<bool> flags(report.rows.size(), false);
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    const auto& r = report.rows[i];
    if (!r.failed) flags[i] = column_stat(r, column).mean == best.at({r.dataset, r.modality});
  }
  return flags;
}

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string full_precision(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

inline constexpr const char* kReportCsvHeader =
    "dataset,modality,method,status,count,dice,iou,hd95,dice_mean,dice_std,iou_mean,iou_std,hd95_mean,hd95_std";

/// CSV carries the formatted cells and the full-precision statistics;
/// Markdown bolds the per-column winners.
inline std::string render_report(const BenchmarkReport& report, ReportFormat format) {
  if (report.rows.empty()) throw ValidationError("render_report: empty report");
  std::ostringstream os;
  if (format == ReportFormat::csv) {
    os << kReportCsvHeader << '\n';
    for (const auto& r : report.rows) {
      os << detail::csv_field(r.dataset) << ',' << detail::csv_field(r.modality) << ',' << detail::csv_field(r.method)
         << ',' << (r.failed ? "failed" : "ok") << ',' << r.dice.count;
      for (MetricColumn c : {MetricColumn::dice, MetricColumn::iou, MetricColumn::hd95})
        os << ',' << (r.failed ? "failed" : format_mean_std(column_stat(r, c)));
      for (MetricColumn c : {MetricColumn::dice, MetricColumn::iou, MetricColumn::hd95})
        os << ',' << detail::full_precision(column_stat(r, c).mean) << ','
           << detail::full_precision(column_stat(r, c).std);
      os << '\n';
    }
    return os.str();
  }

  const auto bd = best_in_column(report, MetricColumn::dice);
  const auto bi = best_in_column(report, MetricColumn::iou);
  const auto bh = best_in_column(report, MetricColumn::hd95);
  if (!report.title.empty()) os << "## " << report.title << "\n\n";
  os << "| Dataset | Modality | Method | Dice ↑ | IoU ↑ | HD95 ↓ |\n";
  os << "|---|---|---|---|---|---|\n";
  auto cell = [](const ReportRow& r, MetricColumn c, bool bold) {
    if (r.failed) return std::string("failed");
    const std::string s = format_mean_std(column_stat(r, c));
    return bold ? "**" + s + "**" : s;
  };
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    const auto& r = report.rows[i];
    os << "| " << r.dataset << " | " << r.modality << " | " << r.method << " | " << cell(r, MetricColumn::dice, bd[i])
       << " | " << cell(r, MetricColumn::iou, bi[i]) << " | " << cell(r, MetricColumn::hd95, bh[i]) << " |\n";
  }
  return os.str();
}

/// Inverse of the CSV rendering (statistics recovered from the full-precision columns).
inline BenchmarkReport parse_report_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kReportCsvHeader) throw FormatError("report CSV: unexpected header");
  BenchmarkReport report;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 14) throw FormatError("report CSV: expected 14 fields");
    ReportRow r;
    r.dataset = f[0];
    r.modality = f[1];
    r.method = f[2];
    r.failed = f[3] == "failed";
    const auto count = static_cast<std::size_t>(std::stoull(f[4]));
    SummaryStat* stats[3] = {&r.dice, &r.iou, &r.hd95};
    for (int k = 0; k < 3; ++k) *stats[k] = {std::stod(f[8 + 2 * k]), std::stod(f[9 + 2 * k]), count};
    report.add(std::move(r));
  }
  return report;
}

}  // namespace cfdcam
