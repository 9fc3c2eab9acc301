#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "autoda/attack.hpp"
#include "autoda/report.hpp"
#include "autoda/victims.hpp"

using namespace autoda;
namespace fs = std::filesystem;

namespace {

EvalReport fixture_report(const std::string& name, std::vector<double> finals, double epsilon = 0.5,
                          std::vector<std::int64_t> checkpoints = {10, 20}) {
  EvalReport r;
  r.attack_name = name;
  r.epsilon = epsilon;
  r.checkpoints = checkpoints;
  for (std::size_t i = 0; i < finals.size(); ++i) {
    ImageRecord rec;
    rec.image_id = static_cast<int>(i);
    rec.final_distance = finals[i];
    rec.queries_used = checkpoints.back();
    for (auto cp : checkpoints) {
      rec.distance_at[cp] = finals[i];
      rec.success_at[cp] = finals[i] < epsilon;
    }
    r.images.push_back(rec);
  }
  recompute_aggregates(r);
  r.manifest.run_id = "fixture-" + name;
  r.manifest.command = "test";
  r.manifest.seed = 1;
  r.manifest.started_at = "2000-01-01T00:00:00Z";
  r.manifest.finished_at = "2000-01-01T00:00:01Z";
  return r;
}

}  // namespace

TEST_CASE("checkpoint distance uses the largest recorded index <= q") {
  std::vector<TracePoint> points{{1, 1.0, true}, {5, 0.8, true}, {9, 0.5, true}};
  CHECK(distance_at_checkpoint(points, 1) == 1.0);
  CHECK(distance_at_checkpoint(points, 4) == 1.0);
  CHECK(distance_at_checkpoint(points, 5) == 0.8);
  CHECK(distance_at_checkpoint(points, 100) == 0.5);
  CHECK(std::isinf(distance_at_checkpoint(points, 0)));
}

TEST_CASE("aggregates: mean, stddev, median and asr") {
  EvalReport r = fixture_report("fix", {0.2, 0.4, 0.3, 0.6});
  const auto& agg = r.aggregates.at(10);
  CHECK(agg.mean == Catch::Approx(0.375).margin(1e-15));
  // population stddev of {0.2,0.4,0.3,0.6}: sqrt(0.021875)
  CHECK(agg.stddev == Catch::Approx(std::sqrt(0.021875)).margin(1e-12));
  CHECK(agg.median == Catch::Approx(0.35).margin(1e-15));
  CHECK(agg.asr == 75.0);  // 3 of 4 below 0.5
}

TEST_CASE("asr is 100 percent under an infinite threshold") {
  EvalReport r = fixture_report("inf", {5.0, 9.0}, std::numeric_limits<double>::infinity());
  CHECK(r.aggregates.at(10).asr == 100.0);
  CHECK(r.aggregates.at(20).asr == 100.0);
}

TEST_CASE("odd-count median is the middle value") {
  EvalReport r = fixture_report("odd", {0.9, 0.1, 0.5});
  CHECK(r.aggregates.at(10).median == 0.5);
}

TEST_CASE("report json round-trips exactly") {
  EvalReport r = fixture_report("round", {0.123456789012345, 0.9, 0.000001});
  r.manifest.config = {{"budget", 1000}, {"victim", {{"kind", "sphere"}}}};
  fs::path dir = fs::temp_directory_path() / "autoda_report_test";
  fs::create_directories(dir);
  write_report_json(dir / "r.json", r);
  EvalReport back = load_report_json(dir / "r.json");
  CHECK(back == r);
  fs::remove_all(dir);
}

TEST_CASE("malformed report files are rejected") {
  fs::path dir = fs::temp_directory_path() / "autoda_report_bad";
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "bad.json");
    out << "{\"attack\": 1}";
  }
  CHECK_THROWS_AS(load_report_json(dir / "bad.json"), MalformedFile);
  CHECK_THROWS_AS(load_report_json(dir / "missing.json"), LoadError);
  fs::remove_all(dir);
}

TEST_CASE("trace csv round-trips and reports re-derive from traces") {
  EvalSet set = make_sphere_eval_set(8, 3, 31);
  std::vector<std::int64_t> checkpoints{100, 250, 400};
  EvalReport report;
  report.attack_name = "builtin:final";
  report.epsilon = 0.35;
  report.checkpoints = checkpoints;
  report.manifest.run_id = "rederive-test";

  fs::path dir = fs::temp_directory_path() / "autoda_trace_test";
  fs::create_directories(dir);

  std::vector<AttackTrace> traces;
  for (std::size_t i = 0; i < set.size(); ++i) {
    AttackConfig cfg;
    cfg.max_queries = 400;
    cfg.seed = derive_seed(31, 0x494D4147, i);
    DslProposal proposal(dsl::built_in_final());
    traces.push_back(run_attack(*set[i].oracle, set[i].x0, set[i].original_label, set[i].x1, proposal, cfg));
    std::string name = "trace_img" + std::to_string(i) + ".csv";
    write_trace_csv(dir / name, traces.back(), report.manifest.run_id);
    ImageRecord rec = make_image_record(static_cast<int>(i), traces.back(), checkpoints, report.epsilon);
    rec.trace_file = name;
    report.images.push_back(rec);
  }
  recompute_aggregates(report);

  // read the CSVs back and recompute everything from scratch
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto points = read_trace_csv(dir / report.images[i].trace_file);
    REQUIRE(points.size() == traces[i].points.size());
    for (std::size_t k = 0; k < points.size(); ++k) {
      CHECK(points[k].query_index == traces[i].points[k].query_index);
      CHECK(points[k].d_min == traces[i].points[k].d_min);  // bit-exact round trip
      CHECK(points[k].accepted == traces[i].points[k].accepted);
    }
    for (auto cp : checkpoints)
      CHECK(distance_at_checkpoint(points, cp) == report.images[i].distance_at.at(cp));
  }
  EvalReport rederived = report;
  for (auto& rec : rederived.images) {
    auto points = read_trace_csv(dir / rec.trace_file);
    for (auto cp : checkpoints) {
      rec.distance_at[cp] = distance_at_checkpoint(points, cp);
      rec.success_at[cp] = rec.distance_at[cp] < rederived.epsilon;
    }
    rec.final_distance = points.back().d_min;
  }
  recompute_aggregates(rederived);
  CHECK(rederived.aggregates == report.aggregates);

  // the first line of every csv references the manifest
  std::ifstream in(dir / report.images[0].trace_file);
  std::string first;
  std::getline(in, first);
  CHECK(first.find("rederive-test") != std::string::npos);
  std::string header;
  std::getline(in, header);
  CHECK(header == "query_index,d_min,accepted");
  fs::remove_all(dir);
}

TEST_CASE("comparison tables mark the best cells") {
  EvalReport a = fixture_report("alpha", {0.2, 0.4});   // mean 0.3, asr 100
  EvalReport b = fixture_report("bravo", {0.6, 0.8});   // mean 0.7, asr 0
  std::string text = format_comparison_text({a, b});
  // alpha wins every distance column and the asr column
  std::size_t alpha_row = text.find("alpha");
  std::size_t bravo_row = text.find("bravo");
  REQUIRE(alpha_row != std::string::npos);
  REQUIRE(bravo_row != std::string::npos);
  std::string alpha_line = text.substr(alpha_row, text.find('\n', alpha_row) - alpha_row);
  std::string bravo_line = text.substr(bravo_row, text.find('\n', bravo_row) - bravo_row);
  CHECK(alpha_line.find('*') != std::string::npos);
  CHECK(bravo_line.find('*') == std::string::npos);
  CHECK(text.find("0.3000±0.1000*") != std::string::npos);
  CHECK(text.find("100.0*") != std::string::npos);

  std::string csv = format_comparison_csv({a, b});
  CHECK(csv.find("attack,mean_10,stddev_10,median_10,asr_10,mean_20,stddev_20,median_20,asr_20") == 0);
  CHECK(csv.find("alpha,0.3") != std::string::npos);
  CHECK(csv.find("bravo,0.7") != std::string::npos);
}

TEST_CASE("single-report tables copy the values verbatim") {
  EvalReport a = fixture_report("solo", {0.25, 0.35});
  std::string csv = format_comparison_csv({a});
  CHECK(csv.find("solo,0.3,") != std::string::npos);  // mean 0.3 round-trips
}

TEST_CASE("schema mismatches are rejected") {
  EvalReport a = fixture_report("one", {0.2}, 0.5, {10, 20});
  EvalReport b = fixture_report("two", {0.2}, 0.5, {10, 30});
  CHECK_THROWS_AS(check_comparable({a, b}), ConfigError);
  EvalReport c = fixture_report("three", {0.2}, 0.4, {10, 20});
  CHECK_THROWS_AS(check_comparable({a, c}), ConfigError);
  CHECK_NOTHROW(check_comparable({a, fixture_report("four", {0.9}, 0.5, {10, 20})}));
}
