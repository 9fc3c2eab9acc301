#ifndef AUTODA_LLM_HPP
#define AUTODA_LLM_HPP

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "autoda/dsl.hpp"
#include "autoda/evolution.hpp"
#include "autoda/rng.hpp"

namespace autoda::llm {

struct LlmConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "gpt-3.5-turbo-1106";
  std::string api_key;  // sent only in the Authorization header
  double temperature = 1.0;
  int max_retries = 3;
  std::chrono::seconds timeout{60};
  std::chrono::milliseconds backoff_base{2000};
  unsigned max_in_flight = 2;

  static LlmConfig from_env() {
    LlmConfig cfg;
    if (const char* url = std::getenv("AUTODA_BASE_URL")) cfg.base_url = url;
    if (const char* model = std::getenv("AUTODA_MODEL")) cfg.model = model;
    if (const char* key = std::getenv("AUTODA_API_KEY")) cfg.api_key = key;
    if (const char* retries = std::getenv("AUTODA_MAX_RETRIES")) cfg.max_retries = std::atoi(retries);
    if (const char* backoff = std::getenv("AUTODA_BACKOFF_MS"))
      cfg.backoff_base = std::chrono::milliseconds(std::atoll(backoff));
    if (const char* timeout = std::getenv("AUTODA_TIMEOUT_S"))
      cfg.timeout = std::chrono::seconds(std::atoll(timeout));
    return cfg;
  }
};

// Process-wide transport counter. Tests assert it stays at zero whenever the
// mock generator is selected.
inline std::atomic<std::uint64_t>& transport_request_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

inline std::uint64_t transport_requests_total() { return transport_request_counter().load(); }

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

inline const std::string& grammar_reference() {
  static const std::string text =
      "Program grammar (one statement per line, '#' starts a comment):\n"
      "  NAME = expr            assign once; later lines may use the name\n"
      "  return expr            final line; the expression must be a vector\n"
      "Expressions: + - * / over scalars and vectors (a scalar broadcasts;\n"
      "vector * vector multiplies elementwise; division needs a scalar\n"
      "denominator), dot(a, b), norm2(a), max(a, b), min(a, b), randn(),\n"
      "rand(lo, hi) with numeric bounds, choice(e1; e2; ...) picking one\n"
      "branch at random.\n"
      "Inputs: x0 (original image, vector), x1 (current adversarial image,\n"
      "vector), noise (standard normal vector), s (step-size scalar).\n";
  return text;
}

enum class PromptRole { Initialization, Crossover, Mutation };

// Text with {placeholder} slots. Construction checks that every placeholder
// the role needs is present.
struct PromptTemplate {
  PromptRole role;
  std::string text;

  PromptTemplate(PromptRole role_, std::string text_) : role(role_), text(std::move(text_)) {
    for (const char* ph : required_placeholders(role))
      if (text.find(ph) == std::string::npos)
        throw ConfigError(std::string("prompt template missing placeholder ") + ph);
  }

  static std::vector<const char*> required_placeholders(PromptRole role) {
    switch (role) {
      case PromptRole::Initialization:
        return {"{grammar_reference}"};
      case PromptRole::Crossover:
        return {"{parent_a}", "{parent_b}", "{fitness_a}", "{fitness_b}", "{grammar_reference}"};
      case PromptRole::Mutation:
        return {"{parent_a}", "{fitness_a}", "{grammar_reference}"};
    }
    return {};
  }

  std::string render(const std::map<std::string, std::string>& values) const {
    std::string out = text;
    auto substitute = [&out](const std::string& key, const std::string& value) {
      std::string tag = "{" + key + "}";
      for (std::size_t pos = out.find(tag); pos != std::string::npos; pos = out.find(tag, pos))
        out.replace(pos, tag.size(), value), pos += value.size();
    };
    substitute("grammar_reference", grammar_reference());
    for (const auto& [k, v] : values) substitute(k, v);
    return out;
  }
};

inline const std::string& output_instruction() {
  static const std::string text =
      "\nReply with exactly one fenced code block containing only the program in the grammar above.\n";
  return text;
}

inline const PromptTemplate& initialization_template() {
  static const PromptTemplate tpl(
      PromptRole::Initialization,
      "Given an image x0, its adversarial image x1, and a random normal noise noise, you need to "
      "design an algorithm to combine them to search for a new adversarial example. s ranges from "
      "0.5 to 1.5. It gets larger when this algorithm outputs more adversarial examples, and vice "
      "versa. It can be used to control the step size of the search. Operations you may use "
      "include: adding, subtracting, multiplying, dividing, dot product, and l2 norm computation. "
      "Design an novel algorithm with various search techniques. Your code should be able to run "
      "without further assistance.\n\n{grammar_reference}" +
          output_instruction());
  return tpl;
}

inline const PromptTemplate& crossover_template() {
  static const PromptTemplate tpl(
      PromptRole::Crossover,
      "Combine the two programs below into one improved program for searching adversarial examples. "
      "Lower fitness is better.\n\nProgram A (fitness {fitness_a}):\n{parent_a}\n"
      "Program B (fitness {fitness_b}):\n{parent_b}\n\n{grammar_reference}" +
          output_instruction());
  return tpl;
}

inline const PromptTemplate& mutation_template() {
  static const PromptTemplate tpl(
      PromptRole::Mutation,
      "Make a small modification to the program below to improve its search for adversarial "
      "examples. Lower fitness is better.\n\nProgram (fitness {fitness_a}):\n{parent_a}\n\n"
      "{grammar_reference}" +
          output_instruction());
  return tpl;
}

inline std::string render_initialization_prompt() { return initialization_template().render({}); }

inline std::string format_fitness(const std::optional<double>& f) {
  return f ? detail_evo::format_double(*f) : std::string("unknown");
}

inline std::string render_crossover_prompt(const std::string& parent_a, const std::string& parent_b,
                                           std::optional<double> fitness_a,
                                           std::optional<double> fitness_b) {
  return crossover_template().render({{"parent_a", parent_a},
                                      {"parent_b", parent_b},
                                      {"fitness_a", format_fitness(fitness_a)},
                                      {"fitness_b", format_fitness(fitness_b)}});
}

inline std::string render_mutation_prompt(const std::string& parent, std::optional<double> fitness) {
  return mutation_template().render({{"parent_a", parent}, {"fitness_a", format_fitness(fitness)}});
}

// ---------------------------------------------------------------------------
// Transport
// ---------------------------------------------------------------------------

// First fenced code block of the reply, else the whole reply trimmed.
inline std::string extract_code_block(const std::string& reply) {
  auto trim = [](std::string s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return std::string();
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  };
  std::size_t open = reply.find("```");
  if (open == std::string::npos) return trim(reply);
  std::size_t body = reply.find('\n', open);  // skip ``` and any language tag
  if (body == std::string::npos) return trim(reply);
  ++body;
  std::size_t close = reply.find("```", body);
  if (close == std::string::npos) return trim(reply.substr(body));
  return trim(reply.substr(body, close - body));
}

namespace detail_llm {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix, possibly empty
};

inline SplitUrl split_url(const std::string& base_url) {
  std::size_t scheme = base_url.find("://");
  if (scheme == std::string::npos) throw ConfigError("base_url must include a scheme: " + base_url);
  std::size_t path = base_url.find('/', scheme + 3);
  if (path == std::string::npos) return {base_url, ""};
  std::string prefix = base_url.substr(path);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {base_url.substr(0, path), prefix};
}

}  // namespace detail_llm

// One chat completion round-trip. Retries transport failures and HTTP 429/5xx
// with exponential backoff (base doubling per attempt, uniform jitter) up to
// max_retries; other statuses fail immediately.
inline std::string request_program(const LlmConfig& config, const std::string& prompt) {
  auto [origin, prefix] = detail_llm::split_url(config.base_url);
  httplib::Client client(origin);
  client.set_connection_timeout(config.timeout);
  client.set_read_timeout(config.timeout);
  client.set_write_timeout(config.timeout);

  nlohmann::json body;
  body["model"] = config.model;
  body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", prompt}}});
  body["temperature"] = config.temperature;
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (!config.api_key.empty()) headers.emplace("Authorization", "Bearer " + config.api_key);

  Rng jitter(std::chrono::steady_clock::now().time_since_epoch().count());
  std::string last_error = "no attempt made";
  for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
    if (attempt > 0) {
      auto base = config.backoff_base.count();
      auto delay = static_cast<std::int64_t>(static_cast<double>(base) * (1 << (attempt - 1)) *
                                             (1.0 + 0.5 * jitter.uniform01()));
      std::this_thread::sleep_for(std::chrono::milliseconds(delay));
    }
    transport_request_counter().fetch_add(1, std::memory_order_relaxed);
    auto res = client.Post(prefix + "/chat/completions", headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw GeneratorUnavailable("chat completion failed with HTTP " + std::to_string(res->status));
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw GeneratorUnavailable(std::string("malformed completion JSON: ") + e.what());
    }
    std::string content;
    if (reply.contains("choices") && reply["choices"].is_array() && !reply["choices"].empty())
      content = reply["choices"][0].value("message", nlohmann::json::object()).value("content", "");
    std::string program = extract_code_block(content);
    if (program.empty()) throw EmptyCompletion("completion carried no extractable program text");
    return program;
  }
  throw GeneratorUnavailable("chat completion failed after " + std::to_string(config.max_retries + 1) +
                             " attempts; last error: " + last_error);
}

// ProgramGenerator backed by an OpenAI-compatible chat endpoint. Shareable
// across callers; concurrent requests are bounded by config.max_in_flight.
class LlmGenerator : public ProgramGenerator {
 public:
  explicit LlmGenerator(LlmConfig config) : config_(std::move(config)) {
    if (config_.max_in_flight == 0) config_.max_in_flight = 1;
  }

  std::string init_program(const GenContext&) override {
    return request(render_initialization_prompt());
  }
  std::string crossover(const std::string& parent_a, const std::string& parent_b,
                        const GenContext& ctx) override {
    return request(render_crossover_prompt(parent_a, parent_b, ctx.fitness_a, ctx.fitness_b));
  }
  std::string mutate(const std::string& parent, const GenContext& ctx) override {
    return request(render_mutation_prompt(parent, ctx.fitness_a));
  }

  const LlmConfig& config() const { return config_; }
  unsigned in_flight_peak() const { return peak_; }

 private:
  LlmConfig config_;
  std::mutex mutex_;
  std::condition_variable slot_free_;
  unsigned in_flight_ = 0;
  unsigned peak_ = 0;

  std::string request(const std::string& prompt) {
    {
      std::unique_lock<std::mutex> lock(mutex_);
      slot_free_.wait(lock, [this] { return in_flight_ < config_.max_in_flight; });
      ++in_flight_;
      peak_ = std::max(peak_, in_flight_);
    }
    try {
      std::string result = request_program(config_, prompt);
      release();
      return result;
    } catch (...) {
      release();
      throw;
    }
  }

  void release() {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      --in_flight_;
    }
    slot_free_.notify_one();
  }
};

// ---------------------------------------------------------------------------
// Mock generator
// ---------------------------------------------------------------------------

// Deterministic offline stand-in: a fixed bank of hand-written programs,
// statement-splicing crossover with identifier repair, and a single-constant
// scaling mutation. All behavior derives from (mock seed, call seed).
class MockGenerator : public ProgramGenerator {
 public:
  explicit MockGenerator(std::uint64_t seed = 0) : seed_(seed) {}

  static const std::vector<std::string>& program_bank() {
    static const std::vector<std::string> bank = {
        dsl::kBuiltinInitialSource,
        "return x1 + s * (x0 - x1)\n",
        "d = x0 - x1\n"
        "return x1 + s * d + s * noise\n",
        "d = x0 - x1\n"
        "n = norm2(noise)\n"
        "return x1 + s * (d / max(n, 1)) + s * noise\n",
        "w = rand(0.1, 0.9)\n"
        "return w * x0 + (1 - w) * x1 + s * noise\n",
        "d = x0 - x1\n"
        "k = dot(d, noise) / max(dot(d, d), 0.000001)\n"
        "return x1 + s * d + s * k * d\n",
        "g = randn()\n"
        "return x1 + s * g * noise\n",
        "d = x0 - x1\n"
        "u = d / max(norm2(d), 0.000001)\n"
        "return x1 + s * u + s * noise\n",
        "return choice(x1 + s * noise; x1 + s * (x0 - x1))\n",
        "a = rand(0.5, 1.5)\n"
        "d = x0 - x1\n"
        "return x1 + s * a * d + s * a * noise\n",
        "d = x0 - x1\n"
        "nd = max(norm2(d), 0.000001)\n"
        "m = dot(noise, d) / nd\n"
        "p = noise - m * (d / nd)\n"
        "return x1 + s * d + s * p\n",
        "n2 = norm2(noise)\n"
        "d2 = norm2(x0 - x1)\n"
        "return x1 + s * (x0 - x1) * (n2 / max(n2 + d2, 0.000001)) + s * noise\n",
    };
    return bank;
  }

  std::string init_program(const GenContext& ctx) override {
    const auto& bank = program_bank();
    std::size_t idx = (static_cast<std::size_t>(ctx.slot) + static_cast<std::size_t>(ctx.attempt)) %
                      bank.size();
    return bank[idx];
  }

  // Splices parent_a's statement prefix with parent_b's suffix at a seeded
  // split point; suffix statements whose name is already bound are dropped and
  // identifiers left unbound by the cut are re-bound to x1 (vectors) or s
  // (scalars). The result always parses.
  std::string crossover(const std::string& parent_a, const std::string& parent_b,
                        const GenContext& ctx) override {
    dsl::GenProgram a, b;
    try {
      a = dsl::parse(parent_a);
      b = dsl::parse(parent_b);
    } catch (const ParseError&) {
      return parent_a;
    }
    Rng rng(derive_seed(seed_, 0x4D4F434B, ctx.seed));
    std::size_t cut = rng.uniform_index(a.statements.size() + 1);

    dsl::GenProgram child;
    std::map<std::string, dsl::Kind> bound = {{"x0", dsl::Kind::Vector},
                                              {"x1", dsl::Kind::Vector},
                                              {"noise", dsl::Kind::Vector},
                                              {"s", dsl::Kind::Scalar}};
    for (std::size_t i = 0; i < cut && i < a.statements.size(); ++i) {
      child.statements.push_back(a.statements[i]);
      bound.emplace(a.statements[i].first, a.statements[i].second->kind);
    }
    for (std::size_t i = std::min(cut, b.statements.size()); i < b.statements.size(); ++i) {
      if (bound.count(b.statements[i].first)) continue;
      dsl::ExprPtr repaired = rebind_unbound(b.statements[i].second, bound);
      bound.emplace(b.statements[i].first, repaired->kind);
      child.statements.emplace_back(b.statements[i].first, std::move(repaired));
    }
    child.result = rebind_unbound(b.result, bound);
    return dsl::pretty_print(child);
  }

  // Scales one constant by a seeded factor in [0.9, 1.1]. Programs without
  // constants come back unchanged.
  std::string mutate(const std::string& parent, const GenContext& ctx) override {
    dsl::GenProgram prog;
    try {
      prog = dsl::parse(parent);
    } catch (const ParseError&) {
      return parent;
    }
    std::size_t consts = 0;
    for (const auto& [name, expr] : prog.statements) consts += count_consts(expr);
    consts += count_consts(prog.result);
    if (consts == 0) return parent;
    Rng rng(derive_seed(seed_, 0x4D555430, ctx.seed));
    std::size_t target = rng.uniform_index(consts);
    double factor = rng.uniform(0.9, 1.1);
    std::size_t visited = 0;
    dsl::GenProgram out;
    for (const auto& [name, expr] : prog.statements)
      out.statements.emplace_back(name, scale_const(expr, target, visited, factor));
    out.result = scale_const(prog.result, target, visited, factor);
    return dsl::pretty_print(out);
  }

private:
  std::uint64_t seed_;

  static std::size_t count_consts(const dsl::ExprPtr& e) {
    std::size_t n = e->op == dsl::Op::Const ? 1 : 0;
    for (const auto& a : e->args) n += count_consts(a);
    return n;
  }

  static dsl::ExprPtr scale_const(const dsl::ExprPtr& e, std::size_t target, std::size_t& visited,
                                  double factor) {
    if (e->op == dsl::Op::Const) {
      if (visited++ == target) {
        auto node = std::make_shared<dsl::Expr>(*e);
        node->value = e->value * factor;
        return node;
      }
      return e;
    }
    if (e->args.empty()) return e;
    auto node = std::make_shared<dsl::Expr>(*e);
    for (auto& arg : node->args) arg = scale_const(arg, target, visited, factor);
    return node;
  }

  static dsl::ExprPtr rebind_unbound(const dsl::ExprPtr& e,
                                     const std::map<std::string, dsl::Kind>& bound) {
    if (e->op == dsl::Op::VectorVar || e->op == dsl::Op::ScalarVar) {
      if (bound.count(e->name)) return e;
      auto node = std::make_shared<dsl::Expr>(*e);
      node->name = e->op == dsl::Op::VectorVar ? "x1" : "s";
      return node;
    }
    if (e->args.empty()) return e;
    auto node = std::make_shared<dsl::Expr>(*e);
    for (auto& arg : node->args) arg = rebind_unbound(arg, bound);
    return node;
  }
};

}  // namespace autoda::llm

#endif  // AUTODA_LLM_HPP
