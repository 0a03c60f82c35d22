#pragma once

// Define-by-run reverse-mode automatic differentiation.
//
// A Tensor is an immutable dense array. When produced by an operation on a
// recording Tape it also carries a node id; Tape::backward walks the recorded
// nodes in reverse and accumulates gradients into every node and, for leaves
// created with Tape::param, into the tape's per-parameter gradient buffers.
//
// Everything is templated on the scalar type. Training uses float; the
// finite-difference checks instantiate the same code with double.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mtm {

using Shape = std::vector<std::size_t>;
using ParamId = std::size_t;
using Rng = std::mt19937_64;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SequenceTooShort : public DimensionError {
 public:
  SequenceTooShort(std::size_t length, std::size_t window);
  std::size_t length;
  std::size_t window;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Vectorised kernels split loops into aligned and unaligned parts, so the
// rounding of a result can depend on where its buffers live. Every tensor,
// parameter and gradient buffer starts on a 64-byte boundary to make results
// a function of the inputs alone.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, alignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <typename T>
Buffer<T> to_buffer(const std::vector<T>& v) { return Buffer<T>(v.begin(), v.end()); }

template <typename T>
struct Parameter {
  std::string name;
  Shape shape;
  Buffer<T> value;
};

// Named, ordered collection of trainable arrays. Ids are insertion indices
// and stay stable for the lifetime of the set.
template <typename T>
class ParamSet {
 public:
  ParamId add(std::string name, Shape shape, Buffer<T> value);
  ParamId add(std::string name, Shape shape, const std::vector<T>& value) {
    return add(std::move(name), std::move(shape), to_buffer(value));
  }
  ParamId add(std::string name, Shape shape, std::initializer_list<T> value) {
    return add(std::move(name), std::move(shape), Buffer<T>(value));
  }

  std::size_t size() const { return params_.size(); }
  std::size_t total_size() const;
  Parameter<T>& operator[](ParamId id) { return params_.at(id); }
  const Parameter<T>& operator[](ParamId id) const { return params_.at(id); }
  ParamId id(std::string_view name) const;
  bool contains(std::string_view name) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& p : params_) {
      out.add(p.name, p.shape, Buffer<U>(p.value.begin(), p.value.end()));
    }
    return out;
  }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, ParamId> index_;
};

// One gradient buffer per parameter, parallel to a ParamSet. An empty buffer
// means the parameter received no gradient.
template <typename T>
using Gradients = std::vector<Buffer<T>>;

template <typename T>
class Tape;

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Buffer<T> values);
  Tensor(Shape shape, const std::vector<T>& values) : Tensor(std::move(shape), to_buffer(values)) {}
  Tensor(Shape shape, std::initializer_list<T> values) : Tensor(std::move(shape), Buffer<T>(values)) {}

  static Tensor zeros(Shape shape);
  static Tensor scalar(T value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  // Matrix view: rank 0 is 1x1, rank 1 [n] is 1xn.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const T> data() const {
    return data_ ? std::span<const T>(*data_) : std::span<const T>();
  }
  std::vector<T> to_vector() const { return {data().begin(), data().end()}; }
  T operator[](std::size_t i) const { return (*data_)[i]; }
  T at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }
  T item() const;

  bool tracked() const { return tape_ != nullptr; }
  Tape<T>* tape() const { return tape_; }
  int node() const { return node_; }

 private:
  friend class Tape<T>;
  Shape shape_;
  std::shared_ptr<const Buffer<T>> data_;
  Tape<T>* tape_ = nullptr;
  int node_ = -1;
};

template <typename T>
class Tape {
 public:
  // Called with the node's accumulated output gradient and its forward value.
  using Backward = std::function<void(Tape&, std::span<const T> grad, std::span<const T> value)>;

  // A non-recording tape evaluates forward only: every result is a constant.
  explicit Tape(const ParamSet<T>& params, bool recording = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  const ParamSet<T>& params() const { return params_; }

  // Leaf aliasing a parameter's storage; repeated calls return the same node.
  Tensor<T> param(ParamId id);
  // Free leaf whose gradient can be read back with grad_of after backward.
  Tensor<T> variable(Shape shape, Buffer<T> values);
  Tensor<T> variable(Shape shape, const std::vector<T>& values) {
    return variable(std::move(shape), to_buffer(values));
  }
  Tensor<T> variable(Shape shape, std::initializer_list<T> values) {
    return variable(std::move(shape), Buffer<T>(values));
  }

  // Used by operations to register a result.
  Tensor<T> record(Shape shape, Buffer<T> values, Backward backward);
  // Gradient accumulator of a tracked input, allocated on first use.
  // Returns an empty span for untracked tensors.
  std::span<T> grad(const Tensor<T>& t);

  void backward(const Tensor<T>& loss);

  std::span<const T> grad_of(const Tensor<T>& t) const;
  const Gradients<T>& gradients() const { return gradients_; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::shared_ptr<const Buffer<T>> value;
    Buffer<T> grad;
    Backward backward;
    std::optional<ParamId> param;
  };

  const ParamSet<T>& params_;
  bool recording_;
  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor<T>>> param_leaves_;
  Gradients<T> gradients_;
};

// --- operations -------------------------------------------------------------
//
// Matrix-shaped ops treat rank 0 as 1x1 and rank 1 [n] as a 1xn row.

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
// a[m x n] + row[n], broadcast over rows.
template <typename T> Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row);
// a[m x n] * row[n] elementwise, broadcast over rows.
template <typename T> Tensor<T> mul_row(const Tensor<T>& a, const Tensor<T>& row);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);

// Concatenation along the last axis. All parts must have the same row count.
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts);
// Concatenation along the first axis.
template <typename T> Tensor<T> stack_rows(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> slice_rows(const Tensor<T>& a, std::size_t start, std::size_t count);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& a, std::size_t start, std::size_t count);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
// Mean over rows: [m x n] -> [1 x n].
template <typename T> Tensor<T> mean_rows(const Tensor<T>& a);
// Stride-1 mean over windows of `window` consecutive rows:
// [m x n] -> [(m - window + 1) x n]. Throws SequenceTooShort when m < window.
template <typename T> Tensor<T> window_mean(const Tensor<T>& a, std::size_t window);

// Row lookup [V x d] -> [ids.size() x d]. The padding row, if given, receives
// no gradient.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::uint32_t> ids,
                      std::optional<std::uint32_t> padding_row = std::nullopt);

inline constexpr double kCosineEps = 1e-8;
inline constexpr double kAttentionSumEps = 1e-6;

// v1.v2 / (max(|v1|, eps) * max(|v2|, eps)); returns a rank-0 tensor.
template <typename T> Tensor<T> cosine(const Tensor<T>& v1, const Tensor<T>& v2);
// Row-wise cosine of two [m x n] matrices -> [m x 1].
template <typename T> Tensor<T> cosine_rows(const Tensor<T>& a, const Tensor<T>& b);
// All-pairs cosine of rows: [m x h], [n x h] -> [m x n].
template <typename T> Tensor<T> cosine_matrix(const Tensor<T>& a, const Tensor<T>& b);

// Weight-normalised sum: out_i = sum_j w_ij b_j / sum_j w_ij.
// Rows with |sum_j w_ij| < kAttentionSumEps fall back to the plain mean of b.
template <typename T> Tensor<T> attentive_sum(const Tensor<T>& weights, const Tensor<T>& b);

// Softmax over the last axis, computed with max-subtraction.
template <typename T> Tensor<T> softmax(const Tensor<T>& logits);
// -log softmax(logits)[label] for a single row of logits; rank-0 result.
template <typename T> Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::size_t label);

// Inverted dropout. With rng == nullptr or rate == 0 this is the identity
// (the same tensor is returned).
template <typename T> Tensor<T> dropout(const Tensor<T>& a, double rate, Rng* rng);

// --- finite-difference gradient check ------------------------------------------

class NonDeterministicGraph : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct GradCheckOptions {
  // 0 checks every coordinate; otherwise at most this many per parameter,
  // sampled without replacement.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

template <typename T>
using ScalarGraph = std::function<Tensor<T>(Tape<T>&)>;

// Compares tape gradients of f against central differences
// (f(x+h) - f(x-h)) / 2h. Relative error is
// |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-6). f must be deterministic; a graph
// whose value differs between two evaluations is rejected.
template <typename T>
GradCheckReport grad_check(const ScalarGraph<T>& f, ParamSet<T>& params, double h,
                           const GradCheckOptions& options = {});

}  // namespace mtm
