#ifndef AUTODA_EVOLUTION_HPP
#define AUTODA_EVOLUTION_HPP

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "autoda/attack.hpp"
#include "autoda/core.hpp"
#include "autoda/dsl.hpp"
#include "autoda/parallel.hpp"
#include "autoda/victims.hpp"

namespace autoda {

struct EvolutionConfig {
  int generations = 20;
  int pop_size = 10;
  double crossover_prob = 1.0;
  double mutation_prob = 0.5;
  int fitness_images = 8;
  std::int64_t fitness_budget = 8000;
  std::uint64_t seed = 0;

  void validate() const {
    if (generations < 1 || pop_size < 1 || fitness_images < 1 || fitness_budget < 1)
      throw ConfigError("evolution counts must be >= 1");
    if (crossover_prob < 0 || crossover_prob > 1 || mutation_prob < 0 || mutation_prob > 1)
      throw ConfigError("evolution probabilities must lie in [0,1]");
  }
};

// Carried into every generator call. `seed` is derived per (generation, slot,
// attempt, op) so retries and resumed runs reproduce the same outputs.
struct GenContext {
  int generation = 0;
  int slot = 0;
  int attempt = 0;
  std::uint64_t seed = 0;
  std::optional<double> fitness_a;
  std::optional<double> fitness_b;
};

// Source-to-source program factory: the LLM client in production, a
// deterministic mock in tests. Validity is enforced downstream by dsl::parse.
class ProgramGenerator {
 public:
  virtual ~ProgramGenerator() = default;
  virtual std::string init_program(const GenContext& ctx) = 0;
  virtual std::string crossover(const std::string& parent_a, const std::string& parent_b,
                                const GenContext& ctx) = 0;
  virtual std::string mutate(const std::string& parent, const GenContext& ctx) = 0;
};

struct Candidate {
  enum class State { Unevaluated, Evaluated, Failed };

  std::uint64_t id = 0;
  std::string source;
  std::optional<dsl::GenProgram> program;
  State state = State::Unevaluated;
  double fitness = std::numeric_limits<double>::infinity();
  std::string diagnostic;
  std::vector<std::uint64_t> parent_ids;
  int generation_born = 0;
  std::vector<double> per_image_distances;

  bool failed() const { return state == State::Failed; }
  bool evaluated() const { return state == State::Evaluated; }
};

struct Population {
  int generation = 0;
  std::vector<Candidate> members;  // sorted by (fitness, id); Failed last
};

namespace detail_evo {

inline bool better(const Candidate& a, const Candidate& b) {
  if (a.failed() != b.failed()) return b.failed();
  if (a.fitness != b.fitness) return a.fitness < b.fitness;
  return a.id < b.id;
}

inline void sort_members(std::vector<Candidate>& members) {
  std::sort(members.begin(), members.end(), better);
}

}  // namespace detail_evo

// Runs the walk over the first fitness_images instances and sets the mean
// final distance. A run whose numeric failures exceed half its proposals, or
// any other per-run error, marks the candidate Failed (+inf sentinel).
inline void evaluate_candidate(Candidate& cand, const EvalSet& victims, const EvolutionConfig& config) {
  if (cand.state != Candidate::State::Unevaluated) return;
  if (!cand.program) {
    cand.state = Candidate::State::Failed;
    return;
  }
  if (victims.size() < static_cast<std::size_t>(config.fitness_images)) {
    cand.state = Candidate::State::Failed;
    cand.diagnostic = "evaluation set smaller than fitness_images";
    return;
  }
  double sum = 0;
  std::vector<double> per_image;
  for (int i = 0; i < config.fitness_images; ++i) {
    const EvalInstance& inst = victims[static_cast<std::size_t>(i)];
    AttackConfig acfg;
    acfg.max_queries = config.fitness_budget;
    acfg.seed = derive_seed(config.seed, 0x46495458, cand.id, static_cast<std::uint64_t>(i));
    DslProposal proposal(*cand.program);
    try {
      AttackTrace trace = run_attack(*inst.oracle, inst.x0, inst.original_label, inst.x1, proposal, acfg);
      if (trace.numeric_failures * 2 > trace.proposals_attempted) {
        cand.state = Candidate::State::Failed;
        cand.diagnostic = "numeric failures on more than half of the proposals (image " +
                          std::to_string(i) + ")";
        return;
      }
      double final_d = trace.points.back().d_min;
      per_image.push_back(final_d);
      sum += final_d;
    } catch (const Error& e) {
      cand.state = Candidate::State::Failed;
      cand.diagnostic = std::string("attack run failed on image ") + std::to_string(i) + ": " + e.what();
      return;
    }
  }
  cand.fitness = sum / config.fitness_images;
  cand.per_image_distances = std::move(per_image);
  cand.state = Candidate::State::Evaluated;
}

inline double evaluate_fitness(Candidate& cand, const EvalSet& victims, const EvolutionConfig& config) {
  evaluate_candidate(cand, victims, config);
  return cand.fitness;
}

// ---------------------------------------------------------------------------
// Run-directory persistence
// ---------------------------------------------------------------------------

namespace detail_evo {

inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::string state_name(Candidate::State s) {
  switch (s) {
    case Candidate::State::Unevaluated: return "unevaluated";
    case Candidate::State::Evaluated: return "evaluated";
    case Candidate::State::Failed: return "failed";
  }
  return "unknown";
}

inline Candidate::State state_from_name(const std::string& s) {
  if (s == "evaluated") return Candidate::State::Evaluated;
  if (s == "failed") return Candidate::State::Failed;
  return Candidate::State::Unevaluated;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void persist_generation(const std::filesystem::path& run_dir, const Population& pop) {
  namespace fs = std::filesystem;
  fs::path gen_dir = run_dir / ("gen_" + std::to_string(pop.generation));
  fs::create_directories(gen_dir);
  std::string index = "# id fitness state parents born\n";
  for (const Candidate& c : pop.members) {
    write_file(gen_dir / ("cand_" + std::to_string(c.id) + ".gen"), c.source);
    nlohmann::json meta;
    meta["id"] = c.id;
    meta["state"] = state_name(c.state);
    if (c.evaluated()) {
      meta["fitness"] = c.fitness;
      meta["per_image"] = c.per_image_distances;
    } else {
      meta["fitness"] = nullptr;
    }
    meta["diagnostic"] = c.diagnostic;
    meta["parents"] = c.parent_ids;
    meta["born"] = c.generation_born;
    write_file(gen_dir / ("cand_" + std::to_string(c.id) + ".meta"), meta.dump(2) + "\n");
    index += std::to_string(c.id) + " " + (c.evaluated() ? format_double(c.fitness) : "inf") + " " +
             state_name(c.state) + " ";
    if (c.parent_ids.empty()) {
      index += "-";
    } else {
      for (std::size_t i = 0; i < c.parent_ids.size(); ++i) {
        if (i) index += ",";
        index += std::to_string(c.parent_ids[i]);
      }
    }
    index += " " + std::to_string(c.generation_born) + "\n";
  }
  // the index is written last; its presence marks the generation complete
  write_file(gen_dir / "population.index", index);
}

inline void persist_config(const std::filesystem::path& run_dir, const EvolutionConfig& cfg) {
  nlohmann::json j;
  j["generations"] = cfg.generations;
  j["pop_size"] = cfg.pop_size;
  j["crossover_prob"] = cfg.crossover_prob;
  j["mutation_prob"] = cfg.mutation_prob;
  j["fitness_images"] = cfg.fitness_images;
  j["fitness_budget"] = cfg.fitness_budget;
  j["seed"] = cfg.seed;
  write_file(run_dir / "evolve_config.json", j.dump(2) + "\n");
}

inline EvolutionConfig load_config(const std::filesystem::path& run_dir) {
  nlohmann::json j = nlohmann::json::parse(read_file(run_dir / "evolve_config.json"));
  EvolutionConfig cfg;
  cfg.generations = j.at("generations").get<int>();
  cfg.pop_size = j.at("pop_size").get<int>();
  cfg.crossover_prob = j.at("crossover_prob").get<double>();
  cfg.mutation_prob = j.at("mutation_prob").get<double>();
  cfg.fitness_images = j.at("fitness_images").get<int>();
  cfg.fitness_budget = j.at("fitness_budget").get<std::int64_t>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

inline std::vector<Population> load_history(const std::filesystem::path& run_dir) {
  namespace fs = std::filesystem;
  std::vector<Population> history;
  for (int g = 0;; ++g) {
    fs::path gen_dir = run_dir / ("gen_" + std::to_string(g));
    fs::path index_path = gen_dir / "population.index";
    if (!fs::exists(index_path)) break;
    Population pop;
    pop.generation = g;
    std::istringstream index(read_file(index_path));
    std::string line;
    while (std::getline(index, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream fields(line);
      std::string fitness_text, state_text, parents_text;
      Candidate c;
      fields >> c.id >> fitness_text >> state_text >> parents_text >> c.generation_born;
      if (fields.fail()) throw MalformedFile(index_path.string() + ": bad index line '" + line + "'");
      c.state = state_from_name(state_text);
      if (c.evaluated()) {
        double v = 0;
        auto [p, ec] = std::from_chars(fitness_text.data(), fitness_text.data() + fitness_text.size(), v);
        if (ec != std::errc{}) throw MalformedFile(index_path.string() + ": bad fitness " + fitness_text);
        c.fitness = v;
      }
      if (parents_text != "-") {
        std::istringstream ps(parents_text);
        std::string tok;
        while (std::getline(ps, tok, ',')) c.parent_ids.push_back(std::stoull(tok));
      }
      c.source = read_file(gen_dir / ("cand_" + std::to_string(c.id) + ".gen"));
      nlohmann::json meta = nlohmann::json::parse(read_file(gen_dir / ("cand_" + std::to_string(c.id) + ".meta")));
      c.diagnostic = meta.value("diagnostic", "");
      if (meta.contains("per_image") && meta["per_image"].is_array())
        c.per_image_distances = meta["per_image"].get<std::vector<double>>();
      if (!c.failed()) {
        try {
          c.program = dsl::parse(c.source);
        } catch (const ParseError& e) {
          throw MalformedFile(gen_dir.string() + ": stored program no longer parses: " + e.what());
        }
      }
      pop.members.push_back(std::move(c));
    }
    history.push_back(std::move(pop));
  }
  return history;
}

}  // namespace detail_evo

// ---------------------------------------------------------------------------
// The evolution loop
// ---------------------------------------------------------------------------

// Population-based search: generation 0 from init_program, then per
// generation pop_size children bred by tournament selection, crossover and
// mutation through the generator, with (mu + lambda) elitist survival.
//
// Persistence goes to run_dir (empty path disables it); a generation is
// complete once its population.index exists. With resume = true the loop
// reloads the stored history and continues to cfg.generations. Per-generation
// RNG streams make the resumed run bit-identical to an uninterrupted one.
inline std::vector<Population> run_evolution(const EvolutionConfig& config, ProgramGenerator& generator,
                                             const EvalSet& victims,
                                             const std::filesystem::path& run_dir = {},
                                             bool resume = false, unsigned jobs = 1) {
  config.validate();
  const bool persist = !run_dir.empty();
  std::vector<Population> history;
  std::uint64_t next_id = 0;

  if (resume) {
    if (!persist) throw ConfigError("resume requires a run directory");
    history = detail_evo::load_history(run_dir);
    for (const Population& pop : history)
      if (pop.members.size() != static_cast<std::size_t>(config.pop_size))
        throw ConfigError("stored population size does not match the config; cannot resume");
    // every generation allocates exactly pop_size ids, surviving or not, so
    // the counter restores arithmetically rather than from persisted survivors
    next_id = static_cast<std::uint64_t>(config.pop_size) * history.size();
  }
  if (persist && history.empty()) {
    std::filesystem::create_directories(run_dir);
    detail_evo::persist_config(run_dir, config);
  }

  auto evaluate_all = [&](std::vector<Candidate>& cands) {
    parallel_for(cands.size(), jobs, [&](std::size_t i) { evaluate_candidate(cands[i], victims, config); });
  };

  if (history.empty()) {
    Population pop;
    pop.generation = 0;
    for (int slot = 0; slot < config.pop_size; ++slot) {
      Candidate cand;
      cand.id = next_id++;
      cand.generation_born = 0;
      for (int attempt = 0;; ++attempt) {
        GenContext ctx{0, slot, attempt,
                       derive_seed(config.seed, 0x47454E30, static_cast<std::uint64_t>(slot),
                                   static_cast<std::uint64_t>(attempt)),
                       std::nullopt, std::nullopt};
        cand.source = generator.init_program(ctx);
        try {
          cand.program = dsl::parse(cand.source);
          break;
        } catch (const ParseError& e) {
          cand.diagnostic = e.what();
          if (attempt >= 3) {  // retry budget spent: keep a Failed placeholder
            cand.state = Candidate::State::Failed;
            break;
          }
        }
      }
      pop.members.push_back(std::move(cand));
    }
    evaluate_all(pop.members);
    detail_evo::sort_members(pop.members);
    if (persist) detail_evo::persist_generation(run_dir, pop);
    history.push_back(std::move(pop));
  }

  while (static_cast<int>(history.size()) - 1 < config.generations) {
    const Population& parents = history.back();
    int g = parents.generation + 1;
    Rng rng(derive_seed(config.seed, 0x45564F4C, static_cast<std::uint64_t>(g)));

    auto tournament = [&]() -> const Candidate& {
      const Candidate& a = parents.members[rng.uniform_index(parents.members.size())];
      const Candidate& b = parents.members[rng.uniform_index(parents.members.size())];
      return detail_evo::better(a, b) ? a : b;
    };

    std::vector<Candidate> children;
    for (int slot = 0; slot < config.pop_size; ++slot) {
      const Candidate& pa = tournament();
      const Candidate& pb = tournament();
      bool do_cross = rng.uniform01() < config.crossover_prob;
      bool do_mut = rng.uniform01() < config.mutation_prob;

      Candidate child;
      child.id = next_id++;
      child.generation_born = g;
      child.parent_ids = do_cross ? std::vector<std::uint64_t>{pa.id, pb.id}
                                  : std::vector<std::uint64_t>{pa.id};
      auto fit = [](const Candidate& c) -> std::optional<double> {
        return c.evaluated() ? std::optional<double>(c.fitness) : std::nullopt;
      };
      for (int attempt = 0;; ++attempt) {
        std::string source = pa.source;
        if (do_cross) {
          GenContext ctx{g, slot, attempt,
                         derive_seed(config.seed, 0x43524F53, static_cast<std::uint64_t>(g),
                                     static_cast<std::uint64_t>(slot) << 8 | static_cast<std::uint64_t>(attempt)),
                         fit(pa), fit(pb)};
          source = generator.crossover(pa.source, pb.source, ctx);
        }
        if (do_mut) {
          GenContext ctx{g, slot, attempt,
                         derive_seed(config.seed, 0x4D555441, static_cast<std::uint64_t>(g),
                                     static_cast<std::uint64_t>(slot) << 8 | static_cast<std::uint64_t>(attempt)),
                         fit(pa), fit(pb)};
          source = generator.mutate(source, ctx);
        }
        child.source = source;
        try {
          child.program = dsl::parse(child.source);
          child.state = Candidate::State::Unevaluated;
          child.diagnostic.clear();
          break;
        } catch (const ParseError& e) {
          child.diagnostic = e.what();
          if (attempt >= 3) {
            child.state = Candidate::State::Failed;
            child.program.reset();
            break;
          }
        }
      }
      children.push_back(std::move(child));
    }

    evaluate_all(children);

    Population next;
    next.generation = g;
    next.members = parents.members;
    for (auto& c : children) next.members.push_back(std::move(c));
    detail_evo::sort_members(next.members);
    next.members.resize(config.pop_size);
    if (persist) detail_evo::persist_generation(run_dir, next);
    history.push_back(std::move(next));
  }

  return history;
}

// Minimum-fitness member of the final generation; ties go to the lower id.
inline const Candidate& best_of(const std::vector<Population>& history) {
  if (history.empty()) throw Error("best_of: empty history");
  const Population& last = history.back();
  const Candidate* best = nullptr;
  for (const Candidate& c : last.members) {
    if (c.failed()) continue;
    if (!best || detail_evo::better(c, *best)) best = &c;
  }
  if (!best) throw AllFailed("every candidate of the final generation failed");
  return *best;
}

}  // namespace autoda

#endif  // AUTODA_EVOLUTION_HPP
