#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "autoda/evolution.hpp"
#include "autoda/llm.hpp"

using namespace autoda;
namespace fs = std::filesystem;

namespace {

EvolutionConfig small_config() {
  EvolutionConfig cfg;
  cfg.generations = 4;
  cfg.pop_size = 4;
  cfg.fitness_images = 2;
  cfg.fitness_budget = 300;
  cfg.seed = 17;
  return cfg;
}

Candidate make_candidate(std::uint64_t id, const std::string& source) {
  Candidate c;
  c.id = id;
  c.source = source;
  c.program = dsl::parse(source);
  return c;
}

// generator that echoes the parent everywhere
struct EchoGenerator : ProgramGenerator {
  std::string init_program(const GenContext& ctx) override {
    return llm::MockGenerator().init_program(ctx);
  }
  std::string crossover(const std::string& a, const std::string&, const GenContext&) override { return a; }
  std::string mutate(const std::string& p, const GenContext&) override { return p; }
};

// generator whose crossover returns the final built-in from generation 3 on
struct BreakthroughGenerator : EchoGenerator {
  std::string crossover(const std::string& a, const std::string&, const GenContext& ctx) override {
    if (ctx.generation >= 3) return dsl::kBuiltinFinalSource;
    return a;
  }
};

struct GarbageGenerator : ProgramGenerator {
  std::string init_program(const GenContext&) override { return "@@@ not a program"; }
  std::string crossover(const std::string&, const std::string&, const GenContext&) override {
    return "still not a program (";
  }
  std::string mutate(const std::string& p, const GenContext&) override { return p; }
};

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    fs::path rel = fs::relative(entry.path(), root);
    if (rel.string() == "manifest.json") continue;  // carries timestamps
    std::ifstream in(entry.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    files[rel.string()] = ss.str();
  }
  return files;
}

}  // namespace

TEST_CASE("constant proposal fitness equals the mean starting distance") {
  EvalSet set = make_sphere_eval_set(8, 4, 5);
  EvolutionConfig cfg = small_config();
  cfg.fitness_images = 4;
  Candidate cand = make_candidate(0, "return x1\n");
  double fitness = evaluate_fitness(cand, set, cfg);
  double expected = 0;
  for (const auto& inst : set) expected += l2_distance(inst.x1, inst.x0);
  expected /= 4;
  CHECK(cand.evaluated());
  CHECK(fitness == Catch::Approx(expected).margin(1e-15));
}

TEST_CASE("fitness evaluation is bit-deterministic per candidate id") {
  EvalSet set = make_sphere_eval_set(8, 2, 6);
  EvolutionConfig cfg = small_config();
  Candidate a = make_candidate(3, dsl::kBuiltinFinalSource);
  Candidate b = make_candidate(3, dsl::kBuiltinFinalSource);
  Candidate c = make_candidate(4, dsl::kBuiltinFinalSource);
  CHECK(evaluate_fitness(a, set, cfg) == evaluate_fitness(b, set, cfg));
  CHECK(a.per_image_distances == b.per_image_distances);
  CHECK(evaluate_fitness(c, set, cfg) != a.fitness);  // different noise stream
}

TEST_CASE("built-in final fitness lands in the sphere tolerance band") {
  EvalSet set = make_sphere_eval_set(16, 8, 7);
  EvolutionConfig cfg;
  cfg.fitness_images = 8;
  cfg.fitness_budget = 8000;
  cfg.seed = 7;
  Candidate cand = make_candidate(1, dsl::kBuiltinFinalSource);
  double fitness = evaluate_fitness(cand, set, cfg);
  CHECK(fitness >= 0.25);
  CHECK(fitness <= 1.10 * 0.25);
}

TEST_CASE("unparseable and numerically broken programs fail softly") {
  EvalSet set = make_sphere_eval_set(8, 2, 8);
  EvolutionConfig cfg = small_config();
  Candidate broken;
  broken.id = 9;
  broken.source = "not a program";
  CHECK(evaluate_fitness(broken, set, cfg) == std::numeric_limits<double>::infinity());
  CHECK(broken.failed());

  // division by a degenerate dot product fails on every proposal
  Candidate numeric = make_candidate(10, "z = x0 - x0\nreturn x1 / dot(z, z)\n");
  evaluate_fitness(numeric, set, cfg);
  CHECK(numeric.failed());
  CHECK(numeric.fitness == std::numeric_limits<double>::infinity());
  CHECK_FALSE(numeric.diagnostic.empty());
}

TEST_CASE("echo generator never loses the elitism floor") {
  // children copy a parent's source but draw their own noise streams (the
  // fitness seed binds the candidate id), so the floor can tighten; it can
  // never rise, and the incumbent is only displaced by a strictly better copy.
  EvalSet set = make_sphere_eval_set(8, 2, 9);
  EchoGenerator gen;
  EvolutionConfig cfg = small_config();
  auto history = run_evolution(cfg, gen, set);
  REQUIRE(history.size() == 5);  // initial population + 4 generations
  double first_best = history.front().members.front().fitness;
  for (std::size_t g = 0; g < history.size(); ++g) {
    CHECK(history[g].members.size() == 4);
    CHECK(history[g].members.front().fitness <= first_best);
    if (g > 0) {
      const auto& prev = history[g - 1].members.front();
      const auto& cur = history[g].members.front();
      CHECK(cur.fitness <= prev.fitness);
      if (cur.id != prev.id) CHECK(cur.fitness < prev.fitness);
    }
  }
}

TEST_CASE("an injected improvement is kept from its generation onward") {
  EvalSet set = make_sphere_eval_set(8, 2, 10);
  EvolutionConfig cfg = small_config();
  cfg.generations = 5;

  BreakthroughGenerator gen;
  auto history = run_evolution(cfg, gen, set);

  // children get sequential ids, so the first generation-3 child is
  // pop_size * 3; fitness seeds bind the id, so the reference must use it
  Candidate reference = make_candidate(static_cast<std::uint64_t>(cfg.pop_size) * 3,
                                       dsl::kBuiltinFinalSource);
  evaluate_fitness(reference, set, cfg);

  for (std::size_t g = 3; g < history.size(); ++g)
    CHECK(history[g].members.front().fitness <= reference.fitness);
}

TEST_CASE("best fitness is non-increasing across generations") {
  EvalSet set = make_sphere_eval_set(8, 2, 11);
  llm::MockGenerator gen(11);
  EvolutionConfig cfg = small_config();
  cfg.seed = 11;
  auto history = run_evolution(cfg, gen, set);
  for (std::size_t g = 1; g < history.size(); ++g)
    CHECK(history[g].members.front().fitness <= history[g - 1].members.front().fitness);
}

TEST_CASE("lineage forms a DAG rooted in generation zero") {
  EvalSet set = make_sphere_eval_set(8, 2, 12);
  llm::MockGenerator gen(12);
  EvolutionConfig cfg = small_config();
  cfg.seed = 12;
  auto history = run_evolution(cfg, gen, set);

  std::map<std::uint64_t, int> born;
  for (const auto& pop : history)
    for (const auto& c : pop.members) born[c.id] = c.generation_born;
  for (const auto& pop : history)
    for (const auto& c : pop.members) {
      if (c.generation_born == 0) CHECK(c.parent_ids.empty());
      for (auto pid : c.parent_ids) {
        CHECK(pid < c.id);
        REQUIRE(born.count(pid) == 1);
        CHECK(born[pid] < c.generation_born);
      }
    }
}

TEST_CASE("all-failed populations surface AllFailed") {
  EvalSet set = make_sphere_eval_set(8, 2, 13);
  GarbageGenerator gen;
  EvolutionConfig cfg = small_config();
  cfg.generations = 1;
  auto history = run_evolution(cfg, gen, set);
  for (const auto& c : history.back().members) CHECK(c.failed());
  CHECK_THROWS_AS(best_of(history), AllFailed);
}

TEST_CASE("best_of picks the minimum fitness with id tie-break") {
  Population pop;
  pop.generation = 0;
  Candidate a = make_candidate(0, "return x1\n");
  a.state = Candidate::State::Evaluated;
  a.fitness = 0.5;
  Candidate b = make_candidate(1, "return x1\n");
  b.state = Candidate::State::Evaluated;
  b.fitness = 0.3;
  pop.members = {b, a};
  std::vector<Population> history{pop};
  CHECK(best_of(history).id == 1);

  history[0].members[0].fitness = 0.5;  // tie: ids 1 and 0 both 0.5
  CHECK(best_of(history).id == 0);

  history[0].members = {a};
  CHECK(best_of(history).id == 0);
}

TEST_CASE("persisted runs are bit-identical and resume matches uninterrupted") {
  EvalSet set = make_sphere_eval_set(8, 2, 14);
  EvolutionConfig cfg = small_config();
  cfg.seed = 14;

  fs::path base = fs::temp_directory_path() / "autoda_evo_test";
  fs::remove_all(base);
  fs::path dir_a = base / "a", dir_b = base / "b", dir_c = base / "c";

  {
    llm::MockGenerator gen(14);
    run_evolution(cfg, gen, set, dir_a);
  }
  {
    llm::MockGenerator gen(14);
    run_evolution(cfg, gen, set, dir_b);
  }
  CHECK(read_tree(dir_a) == read_tree(dir_b));

  // stop after generation 2, then resume to the full length
  {
    EvolutionConfig partial = cfg;
    partial.generations = 2;
    llm::MockGenerator gen(14);
    run_evolution(partial, gen, set, dir_c);
  }
  {
    llm::MockGenerator gen(14);
    auto resumed = run_evolution(cfg, gen, set, dir_c, /*resume=*/true);
    REQUIRE(resumed.size() == 5);
  }
  // evolve_config.json reflects the interrupted run's target; everything else matches
  auto tree_a = read_tree(dir_a);
  auto tree_c = read_tree(dir_c);
  tree_a.erase("evolve_config.json");
  tree_c.erase("evolve_config.json");
  CHECK(tree_a == tree_c);

  // resumed history reloads identically
  auto loaded = detail_evo::load_history(dir_a);
  REQUIRE(loaded.size() == 5);
  for (std::size_t g = 0; g < loaded.size(); ++g) {
    CHECK(loaded[g].generation == static_cast<int>(g));
    CHECK(loaded[g].members.size() == 4);
  }
  fs::remove_all(base);
}

TEST_CASE("population size is exact at every generation") {
  EvalSet set = make_sphere_eval_set(8, 2, 15);
  llm::MockGenerator gen(15);
  EvolutionConfig cfg = small_config();
  cfg.pop_size = 6;
  cfg.seed = 15;
  auto history = run_evolution(cfg, gen, set);
  for (const auto& pop : history) CHECK(pop.members.size() == 6);
}

TEST_CASE("members are sorted by fitness with failed candidates last") {
  EvalSet set = make_sphere_eval_set(8, 2, 16);
  llm::MockGenerator gen(16);
  EvolutionConfig cfg = small_config();
  cfg.seed = 16;
  auto history = run_evolution(cfg, gen, set);
  for (const auto& pop : history) {
    for (std::size_t i = 1; i < pop.members.size(); ++i) {
      const auto& prev = pop.members[i - 1];
      const auto& cur = pop.members[i];
      if (!prev.failed() && !cur.failed()) CHECK(prev.fitness <= cur.fitness);
      if (prev.failed()) CHECK(cur.failed());
    }
  }
}

TEST_CASE("fitness evaluations can run on worker threads with identical results") {
  EvalSet set = make_sphere_eval_set(8, 2, 18);
  EvolutionConfig cfg = small_config();
  cfg.seed = 18;
  std::vector<Population> serial, parallel;
  {
    llm::MockGenerator gen(18);
    serial = run_evolution(cfg, gen, set, {}, false, 1);
  }
  {
    llm::MockGenerator gen(18);
    parallel = run_evolution(cfg, gen, set, {}, false, 4);
  }
  REQUIRE(serial.size() == parallel.size());
  for (std::size_t g = 0; g < serial.size(); ++g) {
    REQUIRE(serial[g].members.size() == parallel[g].members.size());
    for (std::size_t i = 0; i < serial[g].members.size(); ++i) {
      CHECK(serial[g].members[i].id == parallel[g].members[i].id);
      CHECK(serial[g].members[i].fitness == parallel[g].members[i].fitness);
    }
  }
}
