#ifndef AUTODA_VICTIMS_HPP
#define AUTODA_VICTIMS_HPP

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "autoda/core.hpp"
#include "autoda/rng.hpp"

namespace autoda {

// label 1 iff w.x >= b. The closed-form optimal perturbation distance makes
// this the bedrock victim for convergence tests.
class HyperplaneOracle : public DecisionOracle {
 public:
  HyperplaneOracle(std::vector<double> w, double b, Shape shape)
      : w_(std::move(w)), b_(b), shape_(std::move(shape)) {
    double n = 0;
    for (double v : w_) n += v * v;
    if (!(n > 0)) throw DomainError("hyperplane normal must be nonzero");
    if (w_.size() != shape_.count()) throw ShapeMismatch("hyperplane normal length vs shape");
    norm_w_ = std::sqrt(n);
  }

  Label label_of(const InputVector& x) const override {
    double dot = 0;
    for (std::size_t i = 0; i < w_.size(); ++i) dot += w_[i] * x.data[i];
    return Label{dot >= b_ ? std::size_t{1} : std::size_t{0}};
  }
  std::size_t class_count() const override { return 2; }
  Shape input_shape() const override { return shape_; }
  std::unique_ptr<DecisionOracle> clone() const override {
    return std::make_unique<HyperplaneOracle>(*this);
  }

  const std::vector<double>& normal() const { return w_; }
  double offset() const { return b_; }
  double normal_norm() const { return norm_w_; }

 private:
  std::vector<double> w_;
  double b_;
  Shape shape_;
  double norm_w_;
};

// label 1 iff ||x - c|| >= r.
class SphereOracle : public DecisionOracle {
 public:
  SphereOracle(std::vector<double> center, double radius, Shape shape)
      : c_(std::move(center)), r_(radius), shape_(std::move(shape)) {
    if (!(r_ > 0)) throw DomainError("sphere radius must be positive");
    if (c_.size() != shape_.count()) throw ShapeMismatch("sphere center length vs shape");
  }

  Label label_of(const InputVector& x) const override {
    double sum = 0;
    for (std::size_t i = 0; i < c_.size(); ++i) {
      double d = x.data[i] - c_[i];
      sum += d * d;
    }
    return Label{std::sqrt(sum) >= r_ ? std::size_t{1} : std::size_t{0}};
  }
  std::size_t class_count() const override { return 2; }
  Shape input_shape() const override { return shape_; }
  std::unique_ptr<DecisionOracle> clone() const override { return std::make_unique<SphereOracle>(*this); }

  const std::vector<double>& center() const { return c_; }
  double radius() const { return r_; }

 private:
  std::vector<double> c_;
  double r_;
  Shape shape_;
};

struct MlpLayer {
  std::vector<std::vector<double>> weights;  // rows: outputs, cols: inputs
  std::vector<double> bias;
  enum class Activation { Relu, None } activation = Activation::None;
};

class MlpOracle : public DecisionOracle {
 public:
  MlpOracle(std::vector<MlpLayer> layers, Shape input_shape)
      : layers_(std::move(layers)), shape_(std::move(input_shape)) {
    if (layers_.empty()) throw DomainError("mlp needs at least one layer");
    std::size_t width = shape_.count();
    for (const auto& layer : layers_) {
      if (layer.weights.empty()) throw ShapeMismatch("mlp layer with no rows");
      for (const auto& row : layer.weights)
        if (row.size() != width) throw ShapeMismatch("mlp layer input width mismatch");
      if (layer.bias.size() != layer.weights.size()) throw ShapeMismatch("mlp bias width mismatch");
      width = layer.weights.size();
    }
  }

  std::vector<double> forward(const InputVector& x) const {
    if (x.shape.count() != shape_.count()) throw ShapeMismatch("mlp input shape mismatch");
    std::vector<double> act = x.data;
    for (const auto& layer : layers_) {
      std::vector<double> next(layer.weights.size());
      for (std::size_t r = 0; r < layer.weights.size(); ++r) {
        double sum = layer.bias[r];
        const auto& row = layer.weights[r];
        for (std::size_t c = 0; c < row.size(); ++c) sum += row[c] * act[c];
        next[r] = layer.activation == MlpLayer::Activation::Relu ? std::max(sum, 0.0) : sum;
      }
      act = std::move(next);
    }
    return act;
  }

  Label label_of(const InputVector& x) const override {
    std::vector<double> logits = forward(x);
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
      if (logits[i] > logits[best]) best = i;  // ties keep the lowest index
    return Label{best};
  }
  std::size_t class_count() const override { return layers_.back().weights.size(); }
  Shape input_shape() const override { return shape_; }
  std::unique_ptr<DecisionOracle> clone() const override { return std::make_unique<MlpOracle>(*this); }

 private:
  std::vector<MlpLayer> layers_;
  Shape shape_;
};

inline Label mlp_label(const MlpOracle& oracle, const InputVector& x) { return oracle.label_of(x); }

// Forward-counting wrapper used to audit that trace length == budget.used.
class CountingOracle : public DecisionOracle {
 public:
  explicit CountingOracle(std::shared_ptr<const DecisionOracle> inner) : inner_(std::move(inner)) {}

  Label label_of(const InputVector& x) const override {
    count_.fetch_add(1, std::memory_order_relaxed);
    return inner_->label_of(x);
  }
  std::size_t class_count() const override { return inner_->class_count(); }
  Shape input_shape() const override { return inner_->input_shape(); }
  std::unique_ptr<DecisionOracle> clone() const override {
    return std::make_unique<CountingOracle>(inner_);  // fresh counter, shared victim
  }

  std::int64_t count() const { return count_.load(std::memory_order_relaxed); }

 private:
  std::shared_ptr<const DecisionOracle> inner_;
  mutable std::atomic<std::int64_t> count_{0};
};

// Closed-form minimum adversarial distance, ignoring box effects (tests pick
// geometries where the box stays inactive).
inline double optimal_adversarial_distance(const HyperplaneOracle& oracle, const InputVector& x0) {
  double dot = 0;
  const auto& w = oracle.normal();
  for (std::size_t i = 0; i < w.size(); ++i) dot += w[i] * x0.data[i];
  return std::fabs(dot - oracle.offset()) / oracle.normal_norm();
}

inline double optimal_adversarial_distance(const SphereOracle& oracle, const InputVector& x0) {
  double sum = 0;
  const auto& c = oracle.center();
  for (std::size_t i = 0; i < c.size(); ++i) {
    double d = x0.data[i] - c[i];
    sum += d * d;
  }
  double dist = std::sqrt(sum);
  return dist < oracle.radius() ? oracle.radius() - dist : dist - oracle.radius();
}

inline double optimal_adversarial_distance(const DecisionOracle& oracle, const InputVector& x0) {
  if (auto* h = dynamic_cast<const HyperplaneOracle*>(&oracle)) return optimal_adversarial_distance(*h, x0);
  if (auto* s = dynamic_cast<const SphereOracle*>(&oracle)) return optimal_adversarial_distance(*s, x0);
  throw Unsupported("optimal_adversarial_distance: analytic oracles only");
}

// ---------------------------------------------------------------------------
// Dataset loaders
// ---------------------------------------------------------------------------

// CIFAR-10 binary batch: records of 1 label byte + 3072 pixel bytes
// (R, G, B planes, row-major 32x32), pixels scaled to [0,1] by /255.
inline std::vector<std::pair<InputVector, Label>> load_cifar10_batch(const std::filesystem::path& path) {
  constexpr std::size_t kRecord = 3073;
  constexpr std::size_t kPixels = 3072;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open dataset file: " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % kRecord != 0)
    throw MalformedFile(path.string() + ": size " + std::to_string(bytes.size()) +
                        " is not a multiple of 3073");
  std::vector<std::pair<InputVector, Label>> out;
  out.reserve(bytes.size() / kRecord);
  for (std::size_t off = 0; off < bytes.size(); off += kRecord) {
    auto label = static_cast<unsigned char>(bytes[off]);
    if (label > 9)
      throw LabelOutOfRange(path.string() + ": label byte " + std::to_string(label) + " at record " +
                            std::to_string(off / kRecord));
    std::vector<double> pixels(kPixels);
    for (std::size_t i = 0; i < kPixels; ++i)
      pixels[i] = static_cast<unsigned char>(bytes[off + 1 + i]) / 255.0;
    out.emplace_back(InputVector(std::move(pixels), Shape::chw(3, 32, 32)), Label{label});
  }
  return out;
}

// MLP weight file: JSON with layers[], each {"weights": [[...]], "bias": [...],
// "activation": "relu"|"none"}. Documented in the README.
inline MlpOracle load_mlp_weights(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open weight file: " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw MalformedFile(path.string() + ": " + e.what());
  }
  if (!doc.contains("layers") || !doc["layers"].is_array() || doc["layers"].empty())
    throw MalformedFile(path.string() + ": expected non-empty 'layers' array");
  std::vector<MlpLayer> layers;
  for (const auto& jl : doc["layers"]) {
    MlpLayer layer;
    if (!jl.contains("weights") || !jl.contains("bias"))
      throw MalformedFile(path.string() + ": layer needs 'weights' and 'bias'");
    for (const auto& row : jl["weights"]) layer.weights.push_back(row.get<std::vector<double>>());
    layer.bias = jl["bias"].get<std::vector<double>>();
    std::string act = jl.value("activation", "none");
    if (act == "relu")
      layer.activation = MlpLayer::Activation::Relu;
    else if (act == "none")
      layer.activation = MlpLayer::Activation::None;
    else
      throw MalformedFile(path.string() + ": unknown activation '" + act + "'");
    layers.push_back(std::move(layer));
  }
  std::size_t input_dim = layers.front().weights.front().size();
  Shape shape = doc.contains("input_shape")
                    ? Shape{doc["input_shape"].get<std::vector<std::size_t>>()}
                    : Shape::flat(input_dim);
  if (shape.count() != input_dim) throw MalformedFile(path.string() + ": input_shape mismatch");
  return MlpOracle(std::move(layers), std::move(shape));
}

// ---------------------------------------------------------------------------
// Evaluation sets
// ---------------------------------------------------------------------------

// One attackable instance: oracle, target, its label and a validated
// adversarial starting point. optimal_distance is NaN for learned victims.
struct EvalInstance {
  std::shared_ptr<const DecisionOracle> oracle;
  InputVector x0;
  Label original_label;
  InputVector x1;
  double optimal_distance = std::numeric_limits<double>::quiet_NaN();
};

using EvalSet = std::vector<EvalInstance>;

// Targets sit at the sphere center so the optimum equals the radius for every
// instance; starting points are seeded random directions at 1.2 r.
inline EvalSet make_sphere_eval_set(std::size_t dim, std::size_t n, std::uint64_t seed,
                                    double radius = 0.25) {
  if (radius <= 0 || radius * 1.2 > 0.5)
    throw ConfigError("sphere radius must keep 1.2*r inside the [0,1] box around 0.5");
  EvalSet set;
  std::vector<double> center(dim, 0.5);
  auto oracle = std::make_shared<SphereOracle>(center, radius, Shape::flat(dim));
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, 0x53504852, i));
    std::vector<double> dir(dim);
    rng.fill_normal(dir);
    double norm = 0;
    for (double v : dir) norm += v * v;
    norm = std::sqrt(norm);
    std::vector<double> start(dim);
    for (std::size_t j = 0; j < dim; ++j) start[j] = 0.5 + 1.2 * radius * dir[j] / norm;
    EvalInstance inst;
    inst.oracle = oracle;
    inst.x0 = InputVector(center, Shape::flat(dim));
    inst.original_label = Label{0};
    inst.x1 = InputVector(std::move(start), Shape::flat(dim));
    inst.optimal_distance = radius;
    set.push_back(std::move(inst));
  }
  return set;
}

// Each instance gets its own random hyperplane at signed distance `offset`
// from the target; the optimum is exactly `offset`.
inline EvalSet make_hyperplane_eval_set(std::size_t dim, std::size_t n, std::uint64_t seed,
                                        double offset = 0.2) {
  if (offset <= 0 || offset * 1.5 > 0.5)
    throw ConfigError("hyperplane offset must keep 1.5*t inside the [0,1] box around 0.5");
  EvalSet set;
  std::vector<double> center(dim, 0.5);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, 0x48595052, i));
    std::vector<double> w(dim);
    rng.fill_normal(w);
    double norm = 0;
    for (double v : w) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : w) v /= norm;
    double b = 0;
    for (std::size_t j = 0; j < dim; ++j) b += w[j] * center[j];
    b += offset;
    std::vector<double> start(dim);
    for (std::size_t j = 0; j < dim; ++j) start[j] = center[j] + 1.5 * offset * w[j];
    EvalInstance inst;
    inst.oracle = std::make_shared<HyperplaneOracle>(w, b, Shape::flat(dim));
    inst.x0 = InputVector(center, Shape::flat(dim));
    inst.original_label = Label{0};
    inst.x1 = InputVector(std::move(start), Shape::flat(dim));
    inst.optimal_distance = offset;
    set.push_back(std::move(inst));
  }
  return set;
}

// Dataset-backed set: the first n images are attacked; starting points are
// drawn from a fixed pool of the first `pool_size` images, picking the
// minimum-distance one whose oracle label differs from the target's.
inline EvalSet make_dataset_eval_set(std::shared_ptr<const DecisionOracle> oracle,
                                     const std::vector<std::pair<InputVector, Label>>& dataset,
                                     std::size_t n, std::size_t pool_size = 10) {
  if (dataset.size() < n) throw LoadError("dataset smaller than requested image count");
  std::size_t pool = std::min(pool_size, dataset.size());
  EvalSet set;
  for (std::size_t i = 0; i < n; ++i) {
    const InputVector& x0 = dataset[i].first;
    Label original = oracle->label_of(x0);
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_idx = dataset.size();
    for (std::size_t j = 0; j < pool; ++j) {
      if (j == i) continue;
      if (oracle->label_of(dataset[j].first) == original) continue;
      double d = l2_distance(dataset[j].first, x0);
      if (d < best) {
        best = d;
        best_idx = j;
      }
    }
    if (best_idx == dataset.size())
      throw LoadError("no adversarial starting point in the pool for image " + std::to_string(i));
    EvalInstance inst;
    inst.oracle = oracle;
    inst.x0 = x0;
    inst.original_label = original;
    inst.x1 = dataset[best_idx].first;
    set.push_back(std::move(inst));
  }
  return set;
}

}  // namespace autoda

#endif  // AUTODA_VICTIMS_HPP
