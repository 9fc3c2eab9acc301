#ifndef AUTODA_CORE_HPP
#define AUTODA_CORE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "autoda/errors.hpp"

namespace autoda {

inline constexpr const char* kVersion = "0.1.0";

// Tensor extents: (C, H, W) for images or a single flat dimension.
struct Shape {
  std::vector<std::size_t> dims;

  static Shape flat(std::size_t d) { return Shape{{d}}; }
  static Shape chw(std::size_t c, std::size_t h, std::size_t w) { return Shape{{c, h, w}}; }

  std::size_t count() const {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return dims.empty() ? 0 : n;
  }

  bool operator==(const Shape& other) const { return dims == other.dims; }
  bool operator!=(const Shape& other) const { return !(*this == other); }

  std::string to_string() const {
    std::string s;
    for (std::size_t i = 0; i < dims.size(); ++i) {
      if (i) s += 'x';
      s += std::to_string(dims[i]);
    }
    return s;
  }
};

// A point of the input space. Components are expected to lie in [0,1] once
// clamp_to_domain has been applied; raw proposals may leave the box.
struct InputVector {
  std::vector<double> data;
  Shape shape;

  InputVector() = default;
  InputVector(std::vector<double> data_, Shape shape_) : data(std::move(data_)), shape(std::move(shape_)) {
    if (data.size() != shape.count())
      throw ShapeMismatch("data length " + std::to_string(data.size()) + " does not match shape " +
                          shape.to_string());
  }

  std::size_t size() const { return data.size(); }
};

struct Label {
  std::size_t index = 0;

  bool operator==(const Label& other) const { return index == other.index; }
  bool operator!=(const Label& other) const { return index != other.index; }
};

// Hard-label victim interface. Implementations must be deterministic within a
// run and total over in-range inputs; they are queried concurrently read-only
// or cloned per worker.
class DecisionOracle {
 public:
  virtual ~DecisionOracle() = default;
  virtual Label label_of(const InputVector& x) const = 0;
  virtual std::size_t class_count() const = 0;
  virtual Shape input_shape() const = 0;
  virtual std::unique_ptr<DecisionOracle> clone() const = 0;
};

// Owned by exactly one attack run. Every oracle query moves `used` by one.
struct QueryBudget {
  std::int64_t max_queries = 0;
  std::int64_t used = 0;

  bool exhausted() const { return used >= max_queries; }
};

struct TracePoint {
  std::int64_t query_index = 0;
  double d_min = 0.0;
  bool accepted = false;
};

// Query-indexed record of one attack run. d_min is non-increasing and
// query_index strictly increasing across points.
struct AttackTrace {
  std::vector<TracePoint> points;
  InputVector final_example;
  std::uint64_t seed = 0;
  std::int64_t proposals_attempted = 0;
  std::int64_t numeric_failures = 0;
  // Populated only when AttackConfig::record_accepted is set; lets tests
  // re-query every accepted point after the run.
  std::vector<std::pair<std::int64_t, InputVector>> accepted_examples;
};

inline double l2_distance(const InputVector& a, const InputVector& b) {
  if (a.shape != b.shape)
    throw ShapeMismatch("l2_distance: " + a.shape.to_string() + " vs " + b.shape.to_string());
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    double d = a.data[i] - b.data[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

inline InputVector clamp_to_domain(InputVector x) {
  for (double& v : x.data) v = std::min(std::max(v, 0.0), 1.0);
  return x;
}

inline bool all_finite(const InputVector& x) {
  for (double v : x.data)
    if (!std::isfinite(v)) return false;
  return true;
}

// One budgeted label query: true iff x is classified away from original_label.
inline bool is_adversarial(const DecisionOracle& oracle, const InputVector& x, Label original_label,
                           QueryBudget& budget) {
  if (budget.exhausted()) throw BudgetExhausted("query budget of " + std::to_string(budget.max_queries) + " reached");
  ++budget.used;
  return oracle.label_of(x) != original_label;
}

}  // namespace autoda

#endif  // AUTODA_CORE_HPP
