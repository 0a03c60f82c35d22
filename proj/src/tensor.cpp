#include "mtm/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace mtm {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

SequenceTooShort::SequenceTooShort(std::size_t length, std::size_t window)
    : DimensionError("sequence too short: L=" + std::to_string(length) +
                     " < ps=" + std::to_string(window)),
      length(length),
      window(window) {}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MMap = Eigen::Map<RowMat<T>>;

struct Dims {
  std::size_t rows;
  std::size_t cols;
};

Dims matrix_dims(const Shape& s) {
  switch (s.size()) {
    case 0: return {1, 1};
    case 1: return {1, s[0]};
    case 2: return {s[0], s[1]};
    default: throw DimensionError("expected rank <= 2, got " + shape_str(s));
  }
}

template <typename T>
Dims dims(const Tensor<T>& t) {
  return matrix_dims(t.shape());
}

template <typename T>
Tape<T>* tape_of(std::initializer_list<const Tensor<T>*> xs) {
  Tape<T>* tape = nullptr;
  for (const auto* x : xs) {
    if (!x->tracked()) continue;
    if (tape && tape != x->tape()) throw std::logic_error("operands recorded on different tapes");
    tape = x->tape();
  }
  return tape;
}

template <typename T>
Tape<T>* tape_of(const std::vector<Tensor<T>>& xs) {
  Tape<T>* tape = nullptr;
  for (const auto& x : xs) {
    if (!x.tracked()) continue;
    if (tape && tape != x.tape()) throw std::logic_error("operands recorded on different tapes");
    tape = x.tape();
  }
  return tape;
}

template <typename T>
Tensor<T> emit(Tape<T>* tape, Shape shape, Buffer<T> values,
               typename Tape<T>::Backward backward) {
  if (tape == nullptr) return Tensor<T>(std::move(shape), std::move(values));
  return tape->record(std::move(shape), std::move(values), std::move(backward));
}

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

template <typename T>
void require_finite(const char* op, std::span<const T> xs) {
  for (T x : xs) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input");
  }
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Cosine of two length-n vectors with the epsilon guard; also accumulates the
// gradient when g != 0 and the output pointers are non-null.
template <typename T>
struct CosineTerms {
  T dot;
  T norm_a;
  T norm_b;
  T denom_a;
  T denom_b;
  T value;
};

template <typename T>
CosineTerms<T> cosine_terms(const T* a, const T* b, std::size_t n) {
  T dot = 0, sa = 0, sb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    dot += a[i] * b[i];
    sa += a[i] * a[i];
    sb += b[i] * b[i];
  }
  const T eps = static_cast<T>(kCosineEps);
  const T na = std::sqrt(sa), nb = std::sqrt(sb);
  const T da = std::max(na, eps), db = std::max(nb, eps);
  return {dot, na, nb, da, db, dot / (da * db)};
}

template <typename T>
void cosine_backward(const T* a, const T* b, std::size_t n, const CosineTerms<T>& c, T g, T* ga,
                     T* gb) {
  const T eps = static_cast<T>(kCosineEps);
  const T inv = g / (c.denom_a * c.denom_b);
  const T ra = c.norm_a > eps ? g * c.value / (c.norm_a * c.norm_a) : T(0);
  const T rb = c.norm_b > eps ? g * c.value / (c.norm_b * c.norm_b) : T(0);
  if (ga) {
    for (std::size_t i = 0; i < n; ++i) ga[i] += inv * b[i] - ra * a[i];
  }
  if (gb) {
    for (std::size_t i = 0; i < n; ++i) gb[i] += inv * a[i] - rb * b[i];
  }
}

template <typename T>
T* ptr_or_null(std::span<T> s) {
  return s.empty() ? nullptr : s.data();
}

}  // namespace

// --- ParamSet ----------------------------------------------------------------

template <typename T>
ParamId ParamSet<T>::add(std::string name, Shape shape, Buffer<T> value) {
  if (value.size() != numel(shape)) {
    throw DimensionError("parameter " + name + ": " + std::to_string(value.size()) +
                         " values for shape " + shape_str(shape));
  }
  if (index_.contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  const ParamId id = params_.size();
  index_.emplace(name, id);
  params_.push_back({std::move(name), std::move(shape), std::move(value)});
  return id;
}

template <typename T>
std::size_t ParamSet<T>::total_size() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
ParamId ParamSet<T>::id(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return it->second;
}

template <typename T>
bool ParamSet<T>::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

// --- Tensor ------------------------------------------------------------------

template <typename T>
Tensor<T>::Tensor(Shape shape, Buffer<T> values) : shape_(std::move(shape)) {
  if (values.size() != numel(shape_)) {
    throw DimensionError(std::to_string(values.size()) + " values for shape " + shape_str(shape_));
  }
  data_ = std::make_shared<const Buffer<T>>(std::move(values));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), Buffer<T>(n, T(0)));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, Buffer<T>{value});
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  return matrix_dims(shape_).rows;
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  return matrix_dims(shape_).cols;
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
  return (*data_)[0];
}

// --- Tape --------------------------------------------------------------------

template <typename T>
Tape<T>::Tape(const ParamSet<T>& params, bool recording)
    : params_(params),
      recording_(recording),
      param_leaves_(params.size()),
      gradients_(params.size()) {}

template <typename T>
Tensor<T> Tape<T>::param(ParamId id) {
  auto& cached = param_leaves_.at(id);
  if (cached) return *cached;
  const Parameter<T>& p = params_[id];
  Tensor<T> t;
  t.shape_ = p.shape;
  // Non-owning alias: parameters outlive any tape built on them.
  t.data_ = std::shared_ptr<const Buffer<T>>(std::shared_ptr<const void>(), &p.value);
  if (recording_) {
    t.tape_ = this;
    t.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{t.data_, {}, {}, id});
  }
  cached = t;
  return t;
}

template <typename T>
Tensor<T> Tape<T>::variable(Shape shape, Buffer<T> values) {
  Tensor<T> t(std::move(shape), std::move(values));
  if (recording_) {
    t.tape_ = this;
    t.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{t.data_, {}, {}, std::nullopt});
  }
  return t;
}

template <typename T>
Tensor<T> Tape<T>::record(Shape shape, Buffer<T> values, Backward backward) {
  Tensor<T> t(std::move(shape), std::move(values));
  if (recording_) {
    t.tape_ = this;
    t.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{t.data_, {}, std::move(backward), std::nullopt});
  }
  return t;
}

template <typename T>
std::span<T> Tape<T>::grad(const Tensor<T>& t) {
  if (t.tape_ != this) return {};
  Node& node = nodes_[t.node_];
  if (node.grad.empty()) node.grad.assign(node.value->size(), T(0));
  return node.grad;
}

template <typename T>
std::span<const T> Tape<T>::grad_of(const Tensor<T>& t) const {
  if (t.tape_ != this) return {};
  return nodes_[t.node_].grad;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (loss.tape_ != this) throw std::logic_error("backward: loss not recorded on this tape");
  if (loss.size() != 1) throw DimensionError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  grad(loss)[0] += T(1);
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& node = nodes_[i];
    if (node.grad.empty()) continue;
    if (node.backward) node.backward(*this, node.grad, *node.value);
    if (node.param) {
      auto& acc = gradients_[*node.param];
      if (acc.empty()) acc.assign(node.grad.size(), T(0));
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += node.grad[k];
    }
  }
}

// --- operations --------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto [m, k] = dims(a);
  const auto [k2, n] = dims(b);
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Buffer<T> out(m * n);
  MMap<T>(out.data(), m, n).noalias() = CMap<T>(a.data().data(), m, k) * CMap<T>(b.data().data(), k, n);
  return emit<T>(tape_of({&a, &b}), Shape{m, n}, std::move(out),
                 [a, b, m, k, n](Tape<T>& tape, std::span<const T> g, std::span<const T>) {
                   CMap<T> G(g.data(), m, n);
                   if (auto ga = tape.grad(a); !ga.empty()) {
                     MMap<T>(ga.data(), m, k).noalias() += G * CMap<T>(b.data().data(), k, n).transpose();
                   }
                   if (auto gb = tape.grad(b); !gb.empty()) {
                     MMap<T>(gb.data(), k, n).noalias() += CMap<T>(a.data().data(), m, k).transpose() * G;
                   }
                 });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a.shape(), b.shape());
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return emit<T>(tape_of({&a, &b}), a.shape(), std::move(out),
                 [a, b](Tape<T>& tape, std::span<const T> g, std::span<const T>) {
                   for (auto* x : {&a, &b}) {
                     if (auto gx = tape.grad(*x); !gx.empty()) {
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     }
                   }
                 });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a.shape(), b.shape());
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return emit<T>(tape_of({&a, &b}), a.shape(), std::move(out),
                 [a, b](Tape<T>& tape, std::span<const T> g, std::span<const T>) {
                   if (auto ga = tape.grad(a); !ga.empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                   }
                   if (auto gb = tape.grad(b); !gb.empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                   }
                 });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a.shape(), b.shape());
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return emit<T>(tape_of({&a, &b}), a.shape(), std::move(out),
                 [a, b](Tape<T>& tape, std::span<const T> g, std::span<const T>) {
                   if (auto ga = tape.grad(a); !ga.empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
                   }
                   if (auto gb = tape.grad(b); !gb.empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
                   }
                 });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return emit<T>(tape_of({&a}), a.shape(), std::move(out),
                 [a, factor](Tape<T>& tape, std::span<const T> g, std::span<const T>) {
                   if (auto ga = tape.grad(a); !ga.empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
                   }
                 });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row) {
  const auto [m, n] = dims(a);
  if (row.size() != n) {
    throw DimensionError("add_row: " + shape_str(a.shape()) + " + " + shape_str(row.shape()));
  }
  Buffer<T> out(a.size());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = a[r * n + c] + row[c];
  return emit<T>(tape_of({&a, &row}), a.shape(), std::move(out),
                 [a, row, m, n](Tape<T>& tape, std::span<const T> g, std::span<const T>) {
                   if (auto ga = tape.grad(a); !ga.empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                   }
                   if (auto gr = tape.grad(row); !gr.empty()) {
                     for (std::size_t r = 0; r < m; ++r)
                       for (std::size_t c = 0; c < n; ++c) gr[c] += g[r * n + c];
                   }
                 });
}

template <typename T>
Tensor<T> mul_row(const Tensor<T>& a, const Tensor<T>& row) {
  const auto [m, n] = dims(a);
  if (row.size() != n) {
    throw DimensionError("mul_row: " + shape_str(a.shape()) + " * " + shape_str(row.shape()));
  }
  Buffer<T> out(a.size());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = a[r * n + c] * row[c];
  return emit<T>(tape_of({&a, &row}), a.shape(), std::move(out),
                 [a, row, m, n](Tape<T>& tape, std::span<const T> g, std::span<const T>) {
                   if (auto ga = tape.grad(a); !ga.empty()) {
                     for (std::size_t r = 0; r < m; ++r)
                       for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[r * n + c] * row[c];
                   }
                   if (auto gr = tape.grad(row); !gr.empty()) {
                     for (std::size_t r = 0; r < m; ++r)
                       for (std::size_t c = 0; c < n; ++c) gr[c] += g[r * n + c] * a[r * n + c];
                   }
                 });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
  return emit<T>(tape_of({&a}), a.shape(), std::move(out),
                 [a](Tape<T>& tape, std::span<const T> g, std::span<const T> y) {
                   if (auto ga = tape.grad(a); !ga.empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
                   }
                 });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(a[i]);
  return emit<T>(tape_of({&a}), a.shape(), std::move(out),
                 [a](Tape<T>& tape, std::span<const T> g, std::span<const T> y) {
                   if (auto ga = tape.grad(a); !ga.empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
                   }
                 });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  return emit<T>(tape_of({&a}), std::move(shape), Buffer<T>(a.data().begin(), a.data().end()),
                 [a](Tape<T>& tape, std::span<const T> g, std::span<const T>) {
                   if (auto ga = tape.grad(a); !ga.empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                   }
                 });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t total = 0;
  bool all_vectors = true;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.rows() != m) {
      throw DimensionError("concat: row mismatch " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    offsets.push_back(total);
    total += p.cols();
    all_vectors = all_vectors && p.rank() <= 1;
  }
  Buffer<T> out(m * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t n = parts[k].cols();
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(parts[k].data().data() + r * n, n, out.data() + r * total + offsets[k]);
  }
  Shape shape = all_vectors ? Shape{total} : Shape{m, total};
  return emit<T>(tape_of(parts), std::move(shape), std::move(out),
                 [parts, offsets, m, total](Tape<T>& tape, std::span<const T> g, std::span<const T>) {
                   for (std::size_t k = 0; k < parts.size(); ++k) {
                     auto gp = tape.grad(parts[k]);
                     if (gp.empty()) continue;
                     const std::size_t n = parts[k].cols();
                     for (std::size_t r = 0; r < m; ++r)
                       for (std::size_t c = 0; c < n; ++c) gp[r * n + c] += g[r * total + offsets[k] + c];
                   }
                 });
}

template <typename T>
Tensor<T> stack_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("stack_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t rows = 0;
  Buffer<T> out;
  for (const auto& p : parts) {
    if (p.cols() != n) {
      throw DimensionError("stack_rows: column mismatch " + shape_str(parts.front().shape()) +
                           " vs " + shape_str(p.shape()));
    }
    rows += p.rows();
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return emit<T>(tape_of(parts), Shape{rows, n}, std::move(out),
                 [parts](Tape<T>& tape, std::span<const T> g, std::span<const T>) {
                   std::size_t offset = 0;
                   for (const auto& p : parts) {
                     if (auto gp = tape.grad(p); !gp.empty()) {
                       for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
                     }
                     offset += p.size();
                   }
                 });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t start, std::size_t count) {
  const auto [m, n] = dims(a);
  if (count == 0 || start + count > m) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") out of " + shape_str(a.shape()));
  }
  Buffer<T> out(a.data().begin() + start * n, a.data().begin() + (start + count) * n);
  return emit<T>(tape_of({&a}), Shape{count, n}, std::move(out),
                 [a, start, n](Tape<T>& tape, std::span<const T> g, std::span<const T>) {
                   if (auto ga = tape.grad(a); !ga.empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) ga[start * n + i] += g[i];
                   }
                 });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t start, std::size_t count) {
  const auto [m, n] = dims(a);
  if (count == 0 || start + count > n) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) +
                         ") out of " + shape_str(a.shape()));
  }
  Buffer<T> out(m * count);
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(a.data().data() + r * n + start, count, out.data() + r * count);
  Shape shape = a.rank() <= 1 ? Shape{count} : Shape{m, count};
  return emit<T>(tape_of({&a}), std::move(shape), std::move(out),
                 [a, start, count, m, n](Tape<T>& tape, std::span<const T> g, std::span<const T>) {
                   if (auto ga = tape.grad(a); !ga.empty()) {
                     for (std::size_t r = 0; r < m; ++r)
                       for (std::size_t c = 0; c < count; ++c) ga[r * n + start + c] += g[r * count + c];
                   }
                 });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T x : a.data()) total += x;
  return emit<T>(tape_of({&a}), Shape{}, {total},
                 [a](Tape<T>& tape, std::span<const T> g, std::span<const T>) {
                   if (auto ga = tape.grad(a); !ga.empty()) {
                     for (auto& x : ga) x += g[0];
                   }
                 });
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& a) {
  const auto [m, n] = dims(a);
  Buffer<T> out(n, T(0));
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c] += a[r * n + c];
  const T inv = T(1) / static_cast<T>(m);
  for (auto& x : out) x *= inv;
  return emit<T>(tape_of({&a}), Shape{1, n}, std::move(out),
                 [a, m, n, inv](Tape<T>& tape, std::span<const T> g, std::span<const T>) {
                   if (auto ga = tape.grad(a); !ga.empty()) {
                     for (std::size_t r = 0; r < m; ++r)
                       for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[c] * inv;
                   }
                 });
}

template <typename T>
Tensor<T> window_mean(const Tensor<T>& a, std::size_t window) {
  if (window == 0) throw std::invalid_argument("window_mean: window must be >= 1");
  const auto [m, n] = dims(a);
  if (m < window) throw SequenceTooShort(m, window);
  const std::size_t out_rows = m - window + 1;
  const T inv = T(1) / static_cast<T>(window);
  Buffer<T> out(out_rows * n, T(0));
  for (std::size_t i = 0; i < out_rows; ++i)
    for (std::size_t k = 0; k < window; ++k)
      for (std::size_t c = 0; c < n; ++c) out[i * n + c] += a[(i + k) * n + c];
  for (auto& x : out) x *= inv;
  return emit<T>(tape_of({&a}), Shape{out_rows, n}, std::move(out),
                 [a, window, out_rows, n, inv](Tape<T>& tape, std::span<const T> g, std::span<const T>) {
                   if (auto ga = tape.grad(a); !ga.empty()) {
                     for (std::size_t i = 0; i < out_rows; ++i)
                       for (std::size_t k = 0; k < window; ++k)
                         for (std::size_t c = 0; c < n; ++c) ga[(i + k) * n + c] += g[i * n + c] * inv;
                   }
                 });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::uint32_t> ids,
                      std::optional<std::uint32_t> padding_row) {
  const auto [v, d] = dims(table);
  if (ids.empty()) throw DimensionError("gather_rows: empty id sequence");
  Buffer<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= v) {
      throw IndexError("token id " + std::to_string(ids[i]) + " out of range for table of " +
                       std::to_string(v) + " rows");
    }
    std::copy_n(table.data().data() + std::size_t{ids[i]} * d, d, out.data() + i * d);
  }
  std::vector<std::uint32_t> id_copy(ids.begin(), ids.end());
  return emit<T>(tape_of({&table}), Shape{ids.size(), d}, std::move(out),
                 [table, ids = std::move(id_copy), d, padding_row](Tape<T>& tape, std::span<const T> g,
                                                                   std::span<const T>) {
                   auto gt = tape.grad(table);
                   if (gt.empty()) return;
                   for (std::size_t i = 0; i < ids.size(); ++i) {
                     if (padding_row && ids[i] == *padding_row) continue;
                     T* row = gt.data() + std::size_t{ids[i]} * d;
                     for (std::size_t c = 0; c < d; ++c) row[c] += g[i * d + c];
                   }
                 });
}

template <typename T>
Tensor<T> cosine(const Tensor<T>& v1, const Tensor<T>& v2) {
  if (v1.size() != v2.size() || v1.size() == 0) {
    throw DimensionError("cosine: " + shape_str(v1.shape()) + " vs " + shape_str(v2.shape()));
  }
  const std::size_t n = v1.size();
  const auto terms = cosine_terms(v1.data().data(), v2.data().data(), n);
  return emit<T>(tape_of({&v1, &v2}), Shape{}, {terms.value},
                 [v1, v2, n, terms](Tape<T>& tape, std::span<const T> g, std::span<const T>) {
                   cosine_backward(v1.data().data(), v2.data().data(), n, terms, g[0],
                                   ptr_or_null(tape.grad(v1)), ptr_or_null(tape.grad(v2)));
                 });
}

template <typename T>
Tensor<T> cosine_rows(const Tensor<T>& a, const Tensor<T>& b) {
  const auto [m, n] = dims(a);
  if (dims(b).rows != m || dims(b).cols != n) {
    throw DimensionError("cosine_rows: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<CosineTerms<T>> terms(m);
  Buffer<T> out(m);
  for (std::size_t r = 0; r < m; ++r) {
    terms[r] = cosine_terms(a.data().data() + r * n, b.data().data() + r * n, n);
    out[r] = terms[r].value;
  }
  return emit<T>(tape_of({&a, &b}), Shape{m, 1}, std::move(out),
                 [a, b, m, n, terms = std::move(terms)](Tape<T>& tape, std::span<const T> g,
                                                        std::span<const T>) {
                   T* ga = ptr_or_null(tape.grad(a));
                   T* gb = ptr_or_null(tape.grad(b));
                   for (std::size_t r = 0; r < m; ++r) {
                     cosine_backward(a.data().data() + r * n, b.data().data() + r * n, n, terms[r], g[r],
                                     ga ? ga + r * n : nullptr, gb ? gb + r * n : nullptr);
                   }
                 });
}

template <typename T>
Tensor<T> cosine_matrix(const Tensor<T>& a, const Tensor<T>& b) {
  const auto [m, h] = dims(a);
  const auto [n, h2] = dims(b);
  if (h != h2) {
    throw DimensionError("cosine_matrix: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const T eps = static_cast<T>(kCosineEps);
  CMap<T> A(a.data().data(), m, h), B(b.data().data(), n, h);
  Eigen::Matrix<T, Eigen::Dynamic, 1> na = A.rowwise().norm();
  Eigen::Matrix<T, Eigen::Dynamic, 1> nb = B.rowwise().norm();
  Eigen::Matrix<T, Eigen::Dynamic, 1> da = na.cwiseMax(eps);
  Eigen::Matrix<T, Eigen::Dynamic, 1> db = nb.cwiseMax(eps);
  Buffer<T> out(m * n);
  MMap<T> C(out.data(), m, n);
  C.noalias() = A * B.transpose();
  C.array() /= (da * db.transpose()).array();
  return emit<T>(
      tape_of({&a, &b}), Shape{m, n}, std::move(out),
      [a, b, m, n, h, na, nb, da, db](Tape<T>& tape, std::span<const T> g, std::span<const T> value) {
        const T eps = static_cast<T>(kCosineEps);
        CMap<T> A(a.data().data(), m, h), B(b.data().data(), n, h);
        CMap<T> G(g.data(), m, n), C(value.data(), m, n);
        RowMat<T> S = G.array() / (da * db.transpose()).array();
        RowMat<T> GC = G.cwiseProduct(C);
        if (auto ga = tape.grad(a); !ga.empty()) {
          MMap<T> GA(ga.data(), m, h);
          GA.noalias() += S * B;
          for (std::size_t i = 0; i < m; ++i) {
            if (na(i) > eps) GA.row(i) -= (GC.row(i).sum() / (na(i) * na(i))) * A.row(i);
          }
        }
        if (auto gb = tape.grad(b); !gb.empty()) {
          MMap<T> GB(gb.data(), n, h);
          GB.noalias() += S.transpose() * A;
          for (std::size_t j = 0; j < n; ++j) {
            if (nb(j) > eps) GB.row(j) -= (GC.col(j).sum() / (nb(j) * nb(j))) * B.row(j);
          }
        }
      });
}

template <typename T>
Tensor<T> attentive_sum(const Tensor<T>& weights, const Tensor<T>& b) {
  const auto [m, n] = dims(weights);
  const auto [n2, h] = dims(b);
  if (n != n2) {
    throw DimensionError("attentive_sum: " + shape_str(weights.shape()) + " vs " + shape_str(b.shape()));
  }
  CMap<T> W(weights.data().data(), m, n), B(b.data().data(), n, h);
  Buffer<T> sums(m);
  std::vector<char> guarded(m);
  Buffer<T> out(m * h);
  MMap<T> O(out.data(), m, h);
  const Eigen::Matrix<T, 1, Eigen::Dynamic> mean = B.colwise().mean();
  for (std::size_t i = 0; i < m; ++i) {
    sums[i] = W.row(i).sum();
    guarded[i] = std::abs(sums[i]) < static_cast<T>(kAttentionSumEps);
    if (guarded[i]) {
      O.row(i) = mean;
    } else {
      O.row(i).noalias() = (W.row(i) * B) / sums[i];
    }
  }
  return emit<T>(tape_of({&weights, &b}), Shape{m, h}, std::move(out),
                 [weights, b, m, n, h, sums = std::move(sums), guarded = std::move(guarded)](
                     Tape<T>& tape, std::span<const T> g, std::span<const T> value) {
                   CMap<T> W(weights.data().data(), m, n), B(b.data().data(), n, h);
                   CMap<T> G(g.data(), m, h), O(value.data(), m, h);
                   auto gw = tape.grad(weights);
                   auto gb = tape.grad(b);
                   for (std::size_t i = 0; i < m; ++i) {
                     if (guarded[i]) {
                       if (!gb.empty()) {
                         MMap<T> GB(gb.data(), n, h);
                         GB.rowwise() += G.row(i) / static_cast<T>(n);
                       }
                       continue;
                     }
                     const Eigen::Matrix<T, 1, Eigen::Dynamic> gn = G.row(i) / sums[i];
                     if (!gw.empty()) {
                       const T gs = -G.row(i).dot(O.row(i)) / sums[i];
                       MMap<T> GW(gw.data(), m, n);
                       GW.row(i).noalias() += (B * gn.transpose()).transpose();
                       GW.row(i).array() += gs;
                     }
                     if (!gb.empty()) {
                       MMap<T> GB(gb.data(), n, h);
                       GB.noalias() += W.row(i).transpose() * gn;
                     }
                   }
                 });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  require_finite<T>("softmax", logits.data());
  const auto [m, n] = dims(logits);
  Buffer<T> out(logits.size());
  for (std::size_t r = 0; r < m; ++r) {
    const T* z = logits.data().data() + r * n;
    const T mx = *std::max_element(z, z + n);
    T total = 0;
    for (std::size_t c = 0; c < n; ++c) total += out[r * n + c] = std::exp(z[c] - mx);
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= total;
  }
  return emit<T>(tape_of({&logits}), logits.shape(), std::move(out),
                 [logits, m, n](Tape<T>& tape, std::span<const T> g, std::span<const T> y) {
                   auto gz = tape.grad(logits);
                   if (gz.empty()) return;
                   for (std::size_t r = 0; r < m; ++r) {
                     T dot = 0;
                     for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * y[r * n + c];
                     for (std::size_t c = 0; c < n; ++c) gz[r * n + c] += y[r * n + c] * (g[r * n + c] - dot);
                   }
                 });
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::size_t label) {
  require_finite<T>("softmax_cross_entropy", logits.data());
  const auto [m, n] = dims(logits);
  if (m != 1) throw DimensionError("softmax_cross_entropy: expected one row, got " + shape_str(logits.shape()));
  if (label >= n) throw IndexError("label " + std::to_string(label) + " out of range for " + std::to_string(n) + " classes");
  const T* z = logits.data().data();
  const T mx = *std::max_element(z, z + n);
  Buffer<T> probs(n);
  T total = 0;
  for (std::size_t c = 0; c < n; ++c) total += probs[c] = std::exp(z[c] - mx);
  for (auto& p : probs) p /= total;
  const T loss = (mx + std::log(total)) - z[label];
  return emit<T>(tape_of({&logits}), Shape{}, {loss},
                 [logits, label, probs = std::move(probs)](Tape<T>& tape, std::span<const T> g,
                                                           std::span<const T>) {
                   auto gz = tape.grad(logits);
                   if (gz.empty()) return;
                   for (std::size_t c = 0; c < probs.size(); ++c) {
                     gz[c] += g[0] * (probs[c] - (c == label ? T(1) : T(0)));
                   }
                 });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double rate, Rng* rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must be in [0, 1)");
  if (rng == nullptr || rate == 0.0) return a;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::bernoulli_distribution keep(1.0 - rate);
  Buffer<T> mask(a.size());
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = keep(*rng) ? keep_scale : T(0);
    out[i] = a[i] * mask[i];
  }
  return emit<T>(tape_of({&a}), a.shape(), std::move(out),
                 [a, mask = std::move(mask)](Tape<T>& tape, std::span<const T> g, std::span<const T>) {
                   if (auto ga = tape.grad(a); !ga.empty()) {
                     for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
                   }
                 });
}

// --- gradient check ------------------------------------------------------------

template <typename T>
GradCheckReport grad_check(const ScalarGraph<T>& f, ParamSet<T>& params, double h,
                           const GradCheckOptions& options) {
  if (!(h >= 1e-4 && h <= 1e-2)) throw std::invalid_argument("grad_check: step must be in [1e-4, 1e-2]");

  Tape<T> tape(params);
  const Tensor<T> loss = f(tape);
  tape.backward(loss);
  const T base = loss.item();

  auto evaluate = [&] {
    Tape<T> probe(params, /*recording=*/false);
    return f(probe).item();
  };
  const T again = evaluate();
  if (!(again == base)) {
    throw NonDeterministicGraph("grad_check: graph value changed between evaluations (dropout enabled?)");
  }

  GradCheckReport report;
  Rng rng(options.seed);
  for (ParamId id = 0; id < params.size(); ++id) {
    auto& p = params[id];
    std::vector<std::size_t> coords(p.value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_param && coords.size() > options.max_coords_per_param) {
      std::vector<std::size_t> sampled;
      std::sample(coords.begin(), coords.end(), std::back_inserter(sampled),
                  options.max_coords_per_param, rng);
      coords = std::move(sampled);
    }
    const auto& grads = tape.gradients()[id];
    for (std::size_t idx : coords) {
      const T saved = p.value[idx];
      const T up = saved + static_cast<T>(h);
      const T down = saved - static_cast<T>(h);
      p.value[idx] = up;
      const double f_up = evaluate();
      p.value[idx] = down;
      const double f_down = evaluate();
      p.value[idx] = saved;
      const double numeric = (f_up - f_down) / (static_cast<double>(up) - static_cast<double>(down));
      const double analytic = grads.empty() ? 0.0 : static_cast<double>(grads[idx]);
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      ++report.coords_checked;
      if (report.worst_param.empty() || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p.name;
        report.worst_index = idx;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

#define MTM_INSTANTIATE_TENSOR(T)                                                              \
  template class ParamSet<T>;                                                                  \
  template class Tensor<T>;                                                                    \
  template class Tape<T>;                                                                      \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                               \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> mul_row(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> tanh(const Tensor<T>&);                                                   \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
  template Tensor<T> concat(const std::vector<Tensor<T>>&);                                    \
  template Tensor<T> stack_rows(const std::vector<Tensor<T>>&);                                \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                   \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                   \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> mean_rows(const Tensor<T>&);                                              \
  template Tensor<T> window_mean(const Tensor<T>&, std::size_t);                               \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::uint32_t>,             \
                                 std::optional<std::uint32_t>);                                \
  template Tensor<T> cosine(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> cosine_rows(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> cosine_matrix(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> attentive_sum(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> softmax(const Tensor<T>&);                                                \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::size_t);                     \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng*);                                  \
  template GradCheckReport grad_check(const ScalarGraph<T>&, ParamSet<T>&, double,             \
                                      const GradCheckOptions&);

MTM_INSTANTIATE_TENSOR(float)
MTM_INSTANTIATE_TENSOR(double)

}  // namespace mtm
