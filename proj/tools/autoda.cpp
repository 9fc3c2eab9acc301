// Command-line front end: attack runs, program evolution, report tables and
// DSL checking. See the README for formats and examples.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "autoda/attack.hpp"
#include "autoda/core.hpp"
#include "autoda/dsl.hpp"
#include "autoda/evolution.hpp"
#include "autoda/llm.hpp"
#include "autoda/parallel.hpp"
#include "autoda/report.hpp"
#include "autoda/victims.hpp"

namespace fs = std::filesystem;
using namespace autoda;

namespace {

struct VictimOptions {
  std::string kind = "sphere";  // sphere | hyperplane | mlp
  std::size_t dim = 16;
  double radius = 0.25;
  double offset = 0.2;
  std::string weights;
  std::string dataset;
  std::size_t pool = 10;
};

void add_victim_options(CLI::App* cmd, VictimOptions& opts) {
  cmd->add_option("--victim", opts.kind, "Victim model: sphere | hyperplane | mlp")
      ->check(CLI::IsMember({"sphere", "hyperplane", "mlp"}));
  cmd->add_option("--dim", opts.dim, "Input dimension for analytic victims");
  cmd->add_option("--radius", opts.radius, "Sphere radius");
  cmd->add_option("--offset", opts.offset, "Hyperplane offset from the target");
  cmd->add_option("--weights", opts.weights, "MLP weight file (JSON)");
  cmd->add_option("--dataset", opts.dataset, "CIFAR-10 binary batch file");
  cmd->add_option("--start-pool", opts.pool, "Starting-point pool size for dataset victims");
}

nlohmann::json victim_to_json(const VictimOptions& v) {
  return {{"kind", v.kind},       {"dim", v.dim},         {"radius", v.radius}, {"offset", v.offset},
          {"weights", v.weights}, {"dataset", v.dataset}, {"pool", v.pool}};
}

VictimOptions victim_from_json(const nlohmann::json& j) {
  VictimOptions v;
  v.kind = j.value("kind", "sphere");
  v.dim = j.value("dim", std::size_t{16});
  v.radius = j.value("radius", 0.25);
  v.offset = j.value("offset", 0.2);
  v.weights = j.value("weights", "");
  v.dataset = j.value("dataset", "");
  v.pool = j.value("pool", std::size_t{10});
  return v;
}

EvalSet build_eval_set(const VictimOptions& opts, std::size_t images, std::uint64_t seed) {
  if (opts.kind == "sphere") return make_sphere_eval_set(opts.dim, images, seed, opts.radius);
  if (opts.kind == "hyperplane") return make_hyperplane_eval_set(opts.dim, images, seed, opts.offset);
  if (opts.kind == "mlp") {
    if (opts.weights.empty() || opts.dataset.empty())
      throw ConfigError("mlp victim needs --weights and --dataset");
    auto oracle = std::make_shared<MlpOracle>(load_mlp_weights(opts.weights));
    auto data = load_cifar10_batch(opts.dataset);
    return make_dataset_eval_set(std::move(oracle), data, images, opts.pool);
  }
  throw ConfigError("unknown victim kind: " + opts.kind);
}

// --program accepts builtin:final, builtin:initial, boundary, or a .gen path.
// Parsing happens once, up front; the factory then mints fresh per-run
// proposal state. A missing or unparseable program is a config error.
std::function<std::unique_ptr<ProposalFn>()> make_proposal_factory(const std::string& spec) {
  if (spec == "boundary") return [] { return boundary_attack_proposal(); };
  dsl::GenProgram program;
  if (spec == "builtin:final") {
    program = dsl::built_in_final();
  } else if (spec == "builtin:initial") {
    program = dsl::built_in_initial();
  } else {
    try {
      program = dsl::load_program_file(spec);
    } catch (const LoadError& e) {
      throw ConfigError(e.what());
    }
  }
  return [program = std::move(program)]() -> std::unique_ptr<ProposalFn> {
    return std::make_unique<DslProposal>(program);
  };
}

std::string join_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

// ---------------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------------

struct AttackArgs {
  VictimOptions victim;
  std::string program = "builtin:final";
  std::string name;
  std::int64_t budget = 10000;
  std::size_t images = 8;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  double epsilon = 0.5;
  std::vector<std::int64_t> checkpoints{2500, 5000, 10000};
  std::string out = "runs";
  bool no_clamp = false;
};

int run_attack_cmd(const AttackArgs& args, const std::string& command) {
  EvalSet set = build_eval_set(args.victim, args.images, args.seed);

  RunManifest manifest;
  manifest.run_id = "attack-" + std::to_string(derive_seed(args.seed, 0x52554E49, args.images));
  manifest.command = command;
  manifest.seed = args.seed;
  manifest.started_at = utc_timestamp_now();
  manifest.config = {{"victim", victim_to_json(args.victim)},
                     {"program", args.program},
                     {"budget", args.budget},
                     {"images", args.images},
                     {"epsilon", args.epsilon},
                     {"checkpoints", args.checkpoints},
                     {"clamp", !args.no_clamp}};

  fs::path out_dir = args.out;
  fs::create_directories(out_dir);

  auto proposal_factory = make_proposal_factory(args.program);
  std::vector<AttackTrace> traces(set.size());
  std::vector<std::string> failures(set.size());
  parallel_for(set.size(), args.jobs, [&](std::size_t i) {
    AttackConfig cfg;
    cfg.max_queries = args.budget;
    cfg.seed = derive_seed(args.seed, 0x494D4147, i);
    cfg.clamp = !args.no_clamp;
    try {
      auto proposal = proposal_factory();
      traces[i] = run_attack(*set[i].oracle, set[i].x0, set[i].original_label, set[i].x1, *proposal, cfg);
    } catch (const Error& e) {
      failures[i] = e.what();
    }
  });
  for (std::size_t i = 0; i < set.size(); ++i)
    if (!failures[i].empty()) throw LoadError("image " + std::to_string(i) + ": " + failures[i]);

  EvalReport report;
  report.attack_name = args.name.empty() ? args.program : args.name;
  report.epsilon = args.epsilon;
  report.checkpoints = args.checkpoints;
  report.manifest = manifest;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    std::string trace_name = "trace_img" + std::to_string(i) + ".csv";
    write_trace_csv(out_dir / trace_name, traces[i], manifest.run_id);
    ImageRecord rec = make_image_record(static_cast<int>(i), traces[i], args.checkpoints, args.epsilon);
    rec.trace_file = trace_name;
    report.images.push_back(std::move(rec));
  }
  recompute_aggregates(report);
  report.manifest.finished_at = utc_timestamp_now();

  nlohmann::json jmanifest = {{"run_id", report.manifest.run_id},
                              {"command", report.manifest.command},
                              {"config", report.manifest.config},
                              {"seed", report.manifest.seed},
                              {"version", report.manifest.code_version},
                              {"started_at", report.manifest.started_at},
                              {"finished_at", report.manifest.finished_at}};
  {
    std::ofstream mf(out_dir / "manifest.json", std::ios::trunc);
    mf << jmanifest.dump(2) << '\n';
  }
  write_report_json(out_dir / "report.json", report);

  std::cout << format_comparison_text({report});
  std::cout << "report: " << (out_dir / "report.json").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// evolve
// ---------------------------------------------------------------------------

struct EvolveArgs {
  VictimOptions victim;
  std::string generator = "mock";
  EvolutionConfig config;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::string out;
  std::string resume;
  bool generations_given = false;
};

int run_evolve_cmd(EvolveArgs args, const std::string& command) {
  fs::path run_dir;
  bool resume = !args.resume.empty();
  if (resume) {
    run_dir = args.resume;
    if (!fs::exists(run_dir / "evolve_config.json"))
      throw LoadError("no evolve_config.json under " + run_dir.string());
    EvolutionConfig stored = detail_evo::load_config(run_dir);
    int requested = args.config.generations;
    args.config = stored;
    if (args.generations_given) args.config.generations = requested;
    // victim and generator specs come from the original manifest
    std::ifstream mf(run_dir / "manifest.json");
    if (mf) {
      nlohmann::json m;
      mf >> m;
      if (m.contains("config")) {
        if (m["config"].contains("victim")) args.victim = victim_from_json(m["config"]["victim"]);
        if (m["config"].contains("generator")) args.generator = m["config"]["generator"].get<std::string>();
      }
    }
  } else {
    args.config.seed = args.seed;
    run_dir = args.out.empty() ? fs::path("runs") / ("evolve-" + utc_timestamp_now()) : fs::path(args.out);
  }

  EvalSet set = build_eval_set(args.victim, static_cast<std::size_t>(args.config.fitness_images),
                               args.config.seed);

  std::unique_ptr<ProgramGenerator> generator;
  if (args.generator == "mock") {
    generator = std::make_unique<llm::MockGenerator>(args.config.seed);
  } else if (args.generator == "llm") {
    generator = std::make_unique<llm::LlmGenerator>(llm::LlmConfig::from_env());
  } else {
    throw ConfigError("unknown generator: " + args.generator);
  }

  RunManifest manifest;
  manifest.run_id = "evolve-" + std::to_string(derive_seed(args.config.seed, 0x45564F4C, 1));
  manifest.command = command;
  manifest.seed = args.config.seed;
  manifest.started_at = utc_timestamp_now();
  manifest.config = {{"victim", victim_to_json(args.victim)},
                     {"generator", args.generator},
                     {"generations", args.config.generations},
                     {"pop_size", args.config.pop_size},
                     {"crossover_prob", args.config.crossover_prob},
                     {"mutation_prob", args.config.mutation_prob},
                     {"fitness_images", args.config.fitness_images},
                     {"fitness_budget", args.config.fitness_budget}};

  fs::create_directories(run_dir);
  auto write_manifest = [&]() {
    nlohmann::json j = {{"run_id", manifest.run_id},     {"command", manifest.command},
                        {"config", manifest.config},     {"seed", manifest.seed},
                        {"version", manifest.code_version}, {"started_at", manifest.started_at},
                        {"finished_at", manifest.finished_at}};
    std::ofstream mf(run_dir / "manifest.json", std::ios::trunc);
    mf << j.dump(2) << '\n';
  };
  write_manifest();

  std::vector<Population> history;
  try {
    history = run_evolution(args.config, *generator, set, run_dir, resume, args.jobs);
  } catch (const GeneratorUnavailable&) {
    manifest.finished_at = utc_timestamp_now();
    write_manifest();
    throw;  // exit 4; completed generations stay on disk
  }
  manifest.finished_at = utc_timestamp_now();
  write_manifest();

  std::printf("%-5s %-12s %-12s %s\n", "gen", "best", "mean", "failed");
  for (const Population& pop : history) {
    double best = std::numeric_limits<double>::infinity();
    double sum = 0;
    int evaluated = 0, failed = 0;
    for (const Candidate& c : pop.members) {
      if (c.failed()) {
        ++failed;
        continue;
      }
      best = std::min(best, c.fitness);
      sum += c.fitness;
      ++evaluated;
    }
    std::printf("%-5d %-12.6f %-12.6f %d\n", pop.generation, best,
                evaluated ? sum / evaluated : std::numeric_limits<double>::infinity(), failed);
  }
  const Candidate& best = best_of(history);
  std::cout << "best candidate id " << best.id << " fitness " << best.fitness << "\n"
            << "program:\n"
            << best.source;
  if (best.source.empty() || best.source.back() != '\n') std::cout << '\n';
  std::cout << "run dir: " << run_dir.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// report & dsl check
// ---------------------------------------------------------------------------

int run_report_cmd(const std::vector<std::string>& files, const std::string& csv_out) {
  std::vector<EvalReport> reports;
  for (const auto& f : files) reports.push_back(load_report_json(f));
  check_comparable(reports);
  std::cout << format_comparison_text(reports);
  if (!csv_out.empty()) {
    std::ofstream out(csv_out, std::ios::trunc);
    if (!out) throw Error("cannot write " + csv_out);
    out << format_comparison_csv(reports);
    std::cout << "csv: " << csv_out << '\n';
  }
  return 0;
}

int run_dsl_check(const std::string& file) {
  try {
    dsl::GenProgram prog = dsl::load_program_file(file);
    std::cout << "OK: " << file << " (" << prog.statements.size() << " statements, " << node_count(prog)
              << " nodes)\ncanonical form:\n"
              << dsl::pretty_print(prog);
    return 0;
  } catch (const ParseError& e) {
    std::cerr << file << ": " << e.what() << '\n';
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decision-based adversarial attack toolkit: random-walk attack engine, "
               "generate-program DSL, and LLM-driven program evolution"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from a config file");

  AttackArgs attack_args;
  auto* attack_cmd = app.add_subcommand("attack", "Run a decision-based attack over a set of images");
  add_victim_options(attack_cmd, attack_args.victim);
  attack_cmd->add_option("--program", attack_args.program,
                         "builtin:final | builtin:initial | boundary | path to a .gen file");
  attack_cmd->add_option("--name", attack_args.name, "Attack label used in reports");
  attack_cmd->add_option("--budget", attack_args.budget, "Query budget per image");
  attack_cmd->add_option("--images", attack_args.images, "Number of images to attack");
  attack_cmd->add_option("--seed", attack_args.seed, "Base seed");
  attack_cmd->add_option("--jobs", attack_args.jobs, "Concurrent per-image attacks");
  attack_cmd->add_option("--epsilon", attack_args.epsilon, "Success threshold on the l2 distance");
  attack_cmd->add_option("--checkpoints", attack_args.checkpoints, "Query checkpoints for the report");
  attack_cmd->add_option("--out", attack_args.out, "Output directory");
  attack_cmd->add_flag("--no-clamp", attack_args.no_clamp, "Skip clamping proposals to [0,1]");

  EvolveArgs evolve_args;
  auto* evolve_cmd = app.add_subcommand("evolve", "Evolve generate programs with an LLM or mock generator");
  add_victim_options(evolve_cmd, evolve_args.victim);
  evolve_cmd->add_option("--generator", evolve_args.generator, "mock | llm")
      ->check(CLI::IsMember({"mock", "llm"}));
  auto* gen_opt = evolve_cmd->add_option("--generations", evolve_args.config.generations,
                                         "Number of generations after the initial population");
  evolve_cmd->add_option("--pop", evolve_args.config.pop_size, "Population size");
  evolve_cmd->add_option("--crossover", evolve_args.config.crossover_prob, "Crossover probability");
  evolve_cmd->add_option("--mutation", evolve_args.config.mutation_prob, "Mutation probability");
  evolve_cmd->add_option("--fitness-images", evolve_args.config.fitness_images,
                         "Images per fitness evaluation");
  evolve_cmd->add_option("--fitness-budget", evolve_args.config.fitness_budget,
                         "Query budget per fitness image");
  evolve_cmd->add_option("--seed", evolve_args.seed, "Base seed");
  evolve_cmd->add_option("--jobs", evolve_args.jobs, "Concurrent fitness evaluations");
  evolve_cmd->add_option("--out", evolve_args.out, "Run directory (default runs/evolve-<timestamp>)");
  evolve_cmd->add_option("--resume", evolve_args.resume, "Continue from an existing run directory");

  std::vector<std::string> report_files;
  std::string report_csv;
  auto* report_cmd = app.add_subcommand("report", "Compare evaluation reports at the checkpoints");
  report_cmd->add_option("reports", report_files, "report.json files")->required()->expected(-1);
  report_cmd->add_option("--csv", report_csv, "Also write the comparison as CSV");

  auto* dsl_cmd = app.add_subcommand("dsl", "Generate-program utilities");
  std::string check_file;
  auto* check_cmd = dsl_cmd->add_subcommand("check", "Parse and type-check a .gen file");
  check_cmd->add_option("file", check_file, "program file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (attack_cmd->parsed()) return run_attack_cmd(attack_args, join_args(argc, argv));
    if (evolve_cmd->parsed()) {
      evolve_args.generations_given = gen_opt->count() > 0;
      return run_evolve_cmd(std::move(evolve_args), join_args(argc, argv));
    }
    if (report_cmd->parsed()) return run_report_cmd(report_files, report_csv);
    if (dsl_cmd->parsed() && check_cmd->parsed()) return run_dsl_check(check_file);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const GeneratorUnavailable& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const LoadError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const MalformedFile& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const LabelOutOfRange& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
