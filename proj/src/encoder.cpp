#include "mtm/encoder.hpp"

#include <cmath>
#include <istream>
#include <memory>
#include <sstream>

#include <Eigen/Dense>

namespace mtm {

namespace {

template <typename T>
Buffer<T> uniform_values(std::size_t n, T bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
  Buffer<T> out(n);
  for (auto& x : out) x = static_cast<T>(dist(rng));
  return out;
}

}  // namespace

template <typename T>
LstmLayout add_lstm(ParamSet<T>& params, const std::string& prefix, std::size_t input,
                    std::size_t hidden, Rng& rng) {
  const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hidden)));
  LstmLayout layout;
  layout.input_size = input;
  layout.hidden_size = hidden;
  layout.input_weights =
      params.add(prefix + ".Wx", {input, 4 * hidden}, uniform_values<T>(input * 4 * hidden, bound, rng));
  layout.recurrent_weights =
      params.add(prefix + ".Wh", {hidden, 4 * hidden}, uniform_values<T>(hidden * 4 * hidden, bound, rng));
  Buffer<T> bias(4 * hidden, T(0));
  for (std::size_t j = hidden; j < 2 * hidden; ++j) bias[j] = T(1);
  layout.bias = params.add(prefix + ".b", {4 * hidden}, std::move(bias));
  return layout;
}

template <typename T>
BiLstmLayout add_bilstm(ParamSet<T>& params, const std::string& prefix, std::size_t input,
                        std::size_t hidden, Rng& rng) {
  BiLstmLayout layout;
  layout.forward = add_lstm(params, prefix + ".fwd", input, hidden, rng);
  layout.backward = add_lstm(params, prefix + ".bwd", input, hidden, rng);
  return layout;
}

template <typename T>
ParamId add_embedding(ParamSet<T>& params, const std::string& name, std::size_t vocab,
                      std::size_t dim, T scale, Rng& rng) {
  Buffer<T> table = uniform_values<T>(vocab * dim, scale, rng);
  std::fill_n(table.begin(), dim, T(0));
  return params.add(name, {vocab, dim}, std::move(table));
}

template <typename T>
Tensor<T> embed(Tape<T>& tape, ParamId table, std::span<const TokenId> ids) {
  return gather_rows(tape.param(table), ids, Vocabulary::kPad);
}

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
T logistic(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Gate activations and cell states of every step, kept for the backward pass.
template <typename T>
struct LstmTrace {
  RowMatrix<T> gates;  // [L x 4H] post-activation, in [i | f | g | o] order
  RowMatrix<T> cells;  // [L x H]
};

// The recurrent part of one LSTM direction as a single tape node: given the
// input projections P = X Wx + b [L x 4H], runs the cell with zero initial
// state. Row t of the output is the hidden state at position t.
template <typename T>
Tensor<T> lstm_recurrence(Tape<T>& tape, const Tensor<T>& projected, const Tensor<T>& recurrent,
                          std::size_t h, bool reverse) {
  const std::size_t steps = projected.rows();
  using CMap = Eigen::Map<const RowMatrix<T>>;
  CMap P(projected.data().data(), steps, 4 * h);
  CMap W(recurrent.data().data(), h, 4 * h);

  auto trace = std::make_shared<LstmTrace<T>>();
  trace->gates.resize(steps, 4 * h);
  trace->cells.resize(steps, h);
  Buffer<T> out(steps * h);
  Eigen::Map<RowMatrix<T>> H(out.data(), steps, h);

  RowVector<T> hidden = RowVector<T>::Zero(h);
  RowVector<T> cell = RowVector<T>::Zero(h);
  RowVector<T> z(4 * h);
  for (std::size_t n = 0; n < steps; ++n) {
    const std::size_t t = reverse ? steps - 1 - n : n;
    z.noalias() = P.row(t) + hidden * W;
    for (std::size_t k = 0; k < h; ++k) {
      const T i = logistic(z[k]);
      const T f = logistic(z[h + k]);
      const T g = std::tanh(z[2 * h + k]);
      const T o = logistic(z[3 * h + k]);
      cell[k] = f * cell[k] + i * g;
      hidden[k] = o * std::tanh(cell[k]);
      trace->gates(t, k) = i;
      trace->gates(t, h + k) = f;
      trace->gates(t, 2 * h + k) = g;
      trace->gates(t, 3 * h + k) = o;
    }
    trace->cells.row(t) = cell;
    H.row(t) = hidden;
  }

  if (!tape.recording() || !(projected.tracked() || recurrent.tracked())) {
    return Tensor<T>({steps, h}, std::move(out));
  }
  return tape.record(
      {steps, h}, std::move(out),
      [projected, recurrent, trace, steps, h, reverse](Tape<T>& tape, std::span<const T> grad,
                                                       std::span<const T> value) {
        CMap W(recurrent.data().data(), h, 4 * h);
        CMap G(grad.data(), steps, h);
        CMap Hs(value.data(), steps, h);
        auto gp = tape.grad(projected);
        auto gw = tape.grad(recurrent);
        RowVector<T> dh_next = RowVector<T>::Zero(h);
        RowVector<T> dc_next = RowVector<T>::Zero(h);
        RowVector<T> dz(4 * h);
        for (std::size_t n = steps; n-- > 0;) {
          const std::size_t t = reverse ? steps - 1 - n : n;
          const bool first = n == 0;
          const std::size_t prev = reverse ? t + 1 : t - 1;
          for (std::size_t k = 0; k < h; ++k) {
            const T i = trace->gates(t, k);
            const T f = trace->gates(t, h + k);
            const T g = trace->gates(t, 2 * h + k);
            const T o = trace->gates(t, 3 * h + k);
            const T c = trace->cells(t, k);
            const T c_prev = first ? T(0) : trace->cells(prev, k);
            const T tc = std::tanh(c);
            const T dh = G(t, k) + dh_next[k];
            const T dc = dc_next[k] + dh * o * (T(1) - tc * tc);
            dz[k] = dc * g * i * (T(1) - i);
            dz[h + k] = dc * c_prev * f * (T(1) - f);
            dz[2 * h + k] = dc * i * (T(1) - g * g);
            dz[3 * h + k] = dh * tc * o * (T(1) - o);
            dc_next[k] = dc * f;
          }
          if (!gp.empty()) {
            Eigen::Map<RowMatrix<T>> GP(gp.data(), steps, 4 * h);
            GP.row(t) += dz;
          }
          if (first) break;
          if (!gw.empty()) {
            Eigen::Map<RowMatrix<T>> GW(gw.data(), h, 4 * h);
            GW.noalias() += Hs.row(prev).transpose() * dz;
          }
          dh_next.noalias() = dz * W.transpose();
        }
      });
}

}  // namespace

template <typename T>
Tensor<T> lstm(Tape<T>& tape, const LstmLayout& layout, const Tensor<T>& inputs, bool reverse) {
  const std::size_t steps = inputs.rows();
  if (steps == 0) throw DimensionError("lstm: empty input sequence");
  if (inputs.cols() != layout.input_size) {
    throw DimensionError("lstm: input width " + std::to_string(inputs.cols()) + " != " +
                         std::to_string(layout.input_size));
  }
  // Input projections for every step at once; the bias is folded in here.
  const Tensor<T> projected =
      add_row(matmul(inputs, tape.param(layout.input_weights)), tape.param(layout.bias));
  return lstm_recurrence(tape, projected, tape.param(layout.recurrent_weights), layout.hidden_size, reverse);
}

template <typename T>
DirectionalStates<T> bilstm(Tape<T>& tape, const BiLstmLayout& layout, const Tensor<T>& inputs) {
  return {lstm(tape, layout.forward, inputs, false), lstm(tape, layout.backward, inputs, true)};
}

template <typename T>
DirectionalStates<T> mean_pool(const DirectionalStates<T>& states, std::size_t ps) {
  if (ps == 0) throw std::invalid_argument("mean_pool: pooling size must be >= 1");
  if (ps == 1) return states;
  return {window_mean(states.forward, ps), window_mean(states.backward, ps)};
}

template <typename T>
EncodedText<T> encode_text(Tape<T>& tape, ParamId table, const BiLstmLayout& layout,
                           std::span<const TokenId> ids, std::size_t ps) {
  if (ids.size() < ps) throw SequenceTooShort(ids.size(), ps);
  EncodedText<T> out;
  out.raw = bilstm(tape, layout, embed(tape, table, ids));
  out.pooled = mean_pool(out.raw, ps);
  out.pool_size = ps;
  return out;
}

template <typename T>
std::size_t load_pretrained_embeddings(std::istream& in, const Vocabulary& vocab, Parameter<T>& table) {
  std::string line;
  if (!std::getline(in, line)) throw EmbeddingFileError("embedding file: missing header");
  std::istringstream header(line);
  std::string magic;
  std::size_t count = 0, dim = 0;
  if (!(header >> magic >> count >> dim) || magic != "mtm-emb-v1") {
    throw EmbeddingFileError("embedding file: expected header \"mtm-emb-v1 V d\"");
  }
  if (table.shape.size() != 2 || table.shape[1] != dim) {
    throw EmbeddingFileError("embedding file: dimension " + std::to_string(dim) +
                             " does not match table " + shape_str(table.shape));
  }
  std::size_t filled = 0;
  for (std::size_t row = 0; row < count; ++row) {
    if (!std::getline(in, line)) {
      throw EmbeddingFileError("embedding file: expected " + std::to_string(count) + " vectors, got " +
                               std::to_string(row));
    }
    std::istringstream fields(line);
    std::string token;
    fields >> token;
    Buffer<T> vec(dim);
    for (auto& x : vec) {
      double v;
      if (!(fields >> v)) throw EmbeddingFileError("embedding file: short vector for \"" + token + "\"");
      x = static_cast<T>(v);
    }
    if (!vocab.contains(token)) continue;
    const TokenId id = vocab.id(token);
    if (id == Vocabulary::kPad) continue;
    std::copy(vec.begin(), vec.end(), table.value.begin() + static_cast<std::ptrdiff_t>(id * dim));
    ++filled;
  }
  return filled;
}

#define MTM_INSTANTIATE_ENCODER(T)                                                                  \
  template LstmLayout add_lstm(ParamSet<T>&, const std::string&, std::size_t, std::size_t, Rng&);   \
  template BiLstmLayout add_bilstm(ParamSet<T>&, const std::string&, std::size_t, std::size_t, Rng&); \
  template ParamId add_embedding(ParamSet<T>&, const std::string&, std::size_t, std::size_t, T, Rng&); \
  template Tensor<T> embed(Tape<T>&, ParamId, std::span<const TokenId>);                            \
  template Tensor<T> lstm(Tape<T>&, const LstmLayout&, const Tensor<T>&, bool);                     \
  template DirectionalStates<T> bilstm(Tape<T>&, const BiLstmLayout&, const Tensor<T>&);            \
  template DirectionalStates<T> mean_pool(const DirectionalStates<T>&, std::size_t);                \
  template EncodedText<T> encode_text(Tape<T>&, ParamId, const BiLstmLayout&, std::span<const TokenId>, \
                                      std::size_t);                                                 \
  template std::size_t load_pretrained_embeddings(std::istream&, const Vocabulary&, Parameter<T>&);

MTM_INSTANTIATE_ENCODER(float)
MTM_INSTANTIATE_ENCODER(double)

}  // namespace mtm
