#ifndef AUTODA_REPORT_HPP
#define AUTODA_REPORT_HPP

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "autoda/core.hpp"

namespace autoda {

// Reproducibility header attached to every report; trace CSVs reference it by
// run id in their first comment line.
struct RunManifest {
  std::string run_id;
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::string code_version = kVersion;
  std::string started_at;
  std::string finished_at;

  bool operator==(const RunManifest& o) const {
    return run_id == o.run_id && command == o.command && config == o.config && seed == o.seed &&
           code_version == o.code_version && started_at == o.started_at && finished_at == o.finished_at;
  }
};

inline std::string utc_timestamp_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

struct ImageRecord {
  int image_id = 0;
  double final_distance = 0.0;
  std::int64_t queries_used = 0;
  std::map<std::int64_t, double> distance_at;  // checkpoint -> best distance so far
  std::map<std::int64_t, bool> success_at;     // distance < epsilon
  std::string trace_file;

  bool operator==(const ImageRecord& o) const {
    return image_id == o.image_id && final_distance == o.final_distance &&
           queries_used == o.queries_used && distance_at == o.distance_at && success_at == o.success_at &&
           trace_file == o.trace_file;
  }
};

struct CheckpointAggregate {
  double mean = 0.0;
  double stddev = 0.0;
  double median = 0.0;
  double asr = 0.0;  // percent of images with distance < epsilon

  bool operator==(const CheckpointAggregate& o) const {
    return mean == o.mean && stddev == o.stddev && median == o.median && asr == o.asr;
  }
};

struct EvalReport {
  std::string attack_name;
  double epsilon = 0.5;
  std::vector<std::int64_t> checkpoints{2500, 5000, 10000};
  std::vector<ImageRecord> images;
  std::map<std::int64_t, CheckpointAggregate> aggregates;
  RunManifest manifest;

  bool operator==(const EvalReport& o) const {
    return attack_name == o.attack_name && epsilon == o.epsilon && checkpoints == o.checkpoints &&
           images == o.images && aggregates == o.aggregates && manifest == o.manifest;
  }
};

// d_min at the largest recorded query index <= q.
inline double distance_at_checkpoint(const std::vector<TracePoint>& points, std::int64_t q) {
  double d = std::numeric_limits<double>::infinity();
  for (const TracePoint& pt : points) {
    if (pt.query_index > q) break;
    d = pt.d_min;
  }
  return d;
}

inline double distance_at_checkpoint(const AttackTrace& trace, std::int64_t q) {
  return distance_at_checkpoint(trace.points, q);
}

namespace detail_report {

inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline double mean_of(const std::vector<double>& xs) {
  double sum = 0;
  for (double x : xs) sum += x;
  return xs.empty() ? 0.0 : sum / static_cast<double>(xs.size());
}

inline double stddev_of(const std::vector<double>& xs, double mean) {
  if (xs.empty()) return 0.0;
  double sum = 0;
  for (double x : xs) sum += (x - mean) * (x - mean);
  return std::sqrt(sum / static_cast<double>(xs.size()));
}

inline double median_of(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace detail_report

inline void recompute_aggregates(EvalReport& report) {
  report.aggregates.clear();
  for (std::int64_t cp : report.checkpoints) {
    std::vector<double> dists;
    std::size_t successes = 0;
    for (const ImageRecord& rec : report.images) {
      auto it = rec.distance_at.find(cp);
      double d = it == rec.distance_at.end() ? rec.final_distance : it->second;
      dists.push_back(d);
      if (d < report.epsilon) ++successes;
    }
    CheckpointAggregate agg;
    agg.mean = detail_report::mean_of(dists);
    agg.stddev = detail_report::stddev_of(dists, agg.mean);
    agg.median = detail_report::median_of(dists);
    agg.asr = report.images.empty()
                  ? 0.0
                  : 100.0 * static_cast<double>(successes) / static_cast<double>(report.images.size());
    report.aggregates[cp] = agg;
  }
}

// Builds one image record from a trace, evaluating every checkpoint.
inline ImageRecord make_image_record(int image_id, const AttackTrace& trace,
                                     const std::vector<std::int64_t>& checkpoints, double epsilon) {
  ImageRecord rec;
  rec.image_id = image_id;
  rec.final_distance = trace.points.back().d_min;
  rec.queries_used = trace.points.back().query_index;
  for (std::int64_t cp : checkpoints) {
    double d = distance_at_checkpoint(trace, cp);
    rec.distance_at[cp] = d;
    rec.success_at[cp] = d < epsilon;
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Trace CSV
// ---------------------------------------------------------------------------

// First line references the manifest run id, then the header and one row per
// query. Distances use shortest round-trip formatting so aggregates can be
// re-derived bit-exactly.
inline void write_trace_csv(const std::filesystem::path& path, const AttackTrace& trace,
                            const std::string& run_id) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write trace file " + path.string());
  out << "# manifest: " << run_id << "\n";
  out << "query_index,d_min,accepted\n";
  for (const TracePoint& pt : trace.points)
    out << pt.query_index << ',' << detail_report::format_double(pt.d_min) << ',' << (pt.accepted ? 1 : 0)
        << '\n';
}

inline std::vector<TracePoint> read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot read trace file " + path.string());
  std::vector<TracePoint> points;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;  // column header
      continue;
    }
    TracePoint pt;
    std::size_t c1 = line.find(',');
    std::size_t c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw MalformedFile(path.string() + ": bad row '" + line + "'");
    pt.query_index = std::stoll(line.substr(0, c1));
    std::string dtext = line.substr(c1 + 1, c2 - c1 - 1);
    auto [p, ec] = std::from_chars(dtext.data(), dtext.data() + dtext.size(), pt.d_min);
    if (ec != std::errc{}) throw MalformedFile(path.string() + ": bad d_min '" + dtext + "'");
    pt.accepted = line.substr(c2 + 1) == "1";
    points.push_back(pt);
  }
  return points;
}

// ---------------------------------------------------------------------------
// Report JSON
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  j["attack"] = report.attack_name;
  // JSON has no infinity literal; an unbounded threshold round-trips as text
  if (std::isfinite(report.epsilon))
    j["epsilon"] = report.epsilon;
  else
    j["epsilon"] = report.epsilon > 0 ? "inf" : "-inf";
  j["checkpoints"] = report.checkpoints;
  nlohmann::json aggs = nlohmann::json::object();
  for (const auto& [cp, agg] : report.aggregates)
    aggs[std::to_string(cp)] = {{"mean", agg.mean},
                                {"stddev", agg.stddev},
                                {"median", agg.median},
                                {"asr", agg.asr}};
  j["aggregates"] = aggs;
  nlohmann::json images = nlohmann::json::array();
  for (const ImageRecord& rec : report.images) {
    nlohmann::json ji;
    ji["id"] = rec.image_id;
    ji["final_distance"] = rec.final_distance;
    ji["queries_used"] = rec.queries_used;
    nlohmann::json dists = nlohmann::json::object(), succ = nlohmann::json::object();
    for (const auto& [cp, d] : rec.distance_at) dists[std::to_string(cp)] = d;
    for (const auto& [cp, ok] : rec.success_at) succ[std::to_string(cp)] = ok;
    ji["distances"] = dists;
    ji["success"] = succ;
    ji["trace_file"] = rec.trace_file;
    images.push_back(ji);
  }
  j["images"] = images;
  j["manifest"] = {{"run_id", report.manifest.run_id},     {"command", report.manifest.command},
                   {"config", report.manifest.config},     {"seed", report.manifest.seed},
                   {"version", report.manifest.code_version}, {"started_at", report.manifest.started_at},
                   {"finished_at", report.manifest.finished_at}};
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport report;
  report.attack_name = j.at("attack").get<std::string>();
  const auto& eps = j.at("epsilon");
  if (eps.is_string())
    report.epsilon = eps.get<std::string>() == "-inf" ? -std::numeric_limits<double>::infinity()
                                                      : std::numeric_limits<double>::infinity();
  else
    report.epsilon = eps.get<double>();
  report.checkpoints = j.at("checkpoints").get<std::vector<std::int64_t>>();
  for (const auto& [key, agg] : j.at("aggregates").items()) {
    CheckpointAggregate a;
    a.mean = agg.at("mean").get<double>();
    a.stddev = agg.at("stddev").get<double>();
    a.median = agg.at("median").get<double>();
    a.asr = agg.at("asr").get<double>();
    report.aggregates[std::stoll(key)] = a;
  }
  for (const auto& ji : j.at("images")) {
    ImageRecord rec;
    rec.image_id = ji.at("id").get<int>();
    rec.final_distance = ji.at("final_distance").get<double>();
    rec.queries_used = ji.at("queries_used").get<std::int64_t>();
    for (const auto& [key, d] : ji.at("distances").items()) rec.distance_at[std::stoll(key)] = d.get<double>();
    for (const auto& [key, ok] : ji.at("success").items()) rec.success_at[std::stoll(key)] = ok.get<bool>();
    rec.trace_file = ji.value("trace_file", "");
    report.images.push_back(std::move(rec));
  }
  const auto& m = j.at("manifest");
  report.manifest.run_id = m.value("run_id", "");
  report.manifest.command = m.value("command", "");
  report.manifest.config = m.value("config", nlohmann::json::object());
  report.manifest.seed = m.value("seed", std::uint64_t{0});
  report.manifest.code_version = m.value("version", "");
  report.manifest.started_at = m.value("started_at", "");
  report.manifest.finished_at = m.value("finished_at", "");
  return report;
}

inline void write_report_json(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write report " + path.string());
  out << to_json(report).dump(2) << '\n';
}

inline EvalReport load_report_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot read report " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw MalformedFile(path.string() + ": " + e.what());
  }
  try {
    return report_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedFile(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Comparison tables
// ---------------------------------------------------------------------------

// All reports must share checkpoints and epsilon.
inline void check_comparable(const std::vector<EvalReport>& reports) {
  for (std::size_t i = 1; i < reports.size(); ++i) {
    if (reports[i].checkpoints != reports[0].checkpoints)
      throw ConfigError("reports disagree on checkpoints; cannot compare");
    if (reports[i].epsilon != reports[0].epsilon)
      throw ConfigError("reports disagree on epsilon; cannot compare");
  }
}

namespace detail_report {

inline std::string fixed(double v, int prec) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(prec) << v;
  return ss.str();
}

}  // namespace detail_report

// Aligned text table: one row per report, mean±std / median / ASR per
// checkpoint. The best cell per column (lowest distance, highest ASR) is
// marked with '*'.
inline std::string format_comparison_text(const std::vector<EvalReport>& reports) {
  check_comparable(reports);
  if (reports.empty()) return "";
  const auto& cps = reports[0].checkpoints;

  struct Cell {
    std::string text;
    double value;
  };
  std::vector<std::string> headers{"attack"};
  for (std::int64_t cp : cps) headers.push_back("dist@" + std::to_string(cp));
  for (std::int64_t cp : cps) headers.push_back("median@" + std::to_string(cp));
  for (std::int64_t cp : cps) headers.push_back("asr%@" + std::to_string(cp));

  std::vector<std::vector<Cell>> rows;
  for (const EvalReport& r : reports) {
    std::vector<Cell> row;
    row.push_back({r.attack_name, 0});
    for (std::int64_t cp : cps) {
      const auto& a = r.aggregates.at(cp);
      row.push_back({detail_report::fixed(a.mean, 4) + "±" + detail_report::fixed(a.stddev, 4), a.mean});
    }
    for (std::int64_t cp : cps) {
      const auto& a = r.aggregates.at(cp);
      row.push_back({detail_report::fixed(a.median, 4), a.median});
    }
    for (std::int64_t cp : cps) {
      const auto& a = r.aggregates.at(cp);
      row.push_back({detail_report::fixed(a.asr, 1), -a.asr});  // higher ASR is better
    }
    rows.push_back(std::move(row));
  }
  // star the best (minimum key) cell of every numeric column
  for (std::size_t col = 1; col < headers.size(); ++col) {
    std::size_t best = 0;
    for (std::size_t r = 1; r < rows.size(); ++r)
      if (rows[r][col].value < rows[best][col].value) best = r;
    rows[best][col].text += "*";
  }
  std::vector<std::size_t> widths(headers.size());
  for (std::size_t c = 0; c < headers.size(); ++c) {
    widths[c] = headers[c].size();
    for (const auto& row : rows) widths[c] = std::max(widths[c], row[c].text.size());
  }
  std::ostringstream out;
  auto emit_row = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      out << std::left << std::setw(static_cast<int>(widths[c]) + 2) << cells[c];
    }
    out << '\n';
  };
  emit_row(headers);
  for (const auto& row : rows) {
    std::vector<std::string> cells;
    for (const auto& cell : row) cells.push_back(cell.text);
    emit_row(cells);
  }
  return out.str();
}

inline std::string format_comparison_csv(const std::vector<EvalReport>& reports) {
  check_comparable(reports);
  if (reports.empty()) return "";
  const auto& cps = reports[0].checkpoints;
  std::string out = "attack";
  for (std::int64_t cp : cps)
    out += ",mean_" + std::to_string(cp) + ",stddev_" + std::to_string(cp) + ",median_" +
           std::to_string(cp) + ",asr_" + std::to_string(cp);
  out += "\n";
  for (const EvalReport& r : reports) {
    out += r.attack_name;
    for (std::int64_t cp : cps) {
      const auto& a = r.aggregates.at(cp);
      out += "," + detail_report::format_double(a.mean) + "," + detail_report::format_double(a.stddev) +
             "," + detail_report::format_double(a.median) + "," + detail_report::format_double(a.asr);
    }
    out += "\n";
  }
  return out;
}

}  // namespace autoda

#endif  // AUTODA_REPORT_HPP
