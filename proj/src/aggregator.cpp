#include "mtm/aggregator.hpp"

#include <cmath>

namespace mtm {

template <typename T>
ClassifierLayout add_classifier(ParamSet<T>& params, const std::string& prefix, std::size_t input,
                                std::size_t hidden, Rng& rng) {
  auto xavier = [&](std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Buffer<T> w(fan_in * fan_out);
    for (auto& x : w) x = static_cast<T>(dist(rng));
    return w;
  };
  ClassifierLayout layout;
  layout.input = input;
  layout.hidden = hidden;
  layout.w1 = params.add(prefix + ".W1", {input, hidden}, xavier(input, hidden));
  layout.b1 = params.add(prefix + ".b1", {hidden}, Buffer<T>(hidden, T(0)));
  layout.w2 = params.add(prefix + ".W2", {hidden, hidden}, xavier(hidden, hidden));
  layout.b2 = params.add(prefix + ".b2", {hidden}, Buffer<T>(hidden, T(0)));
  layout.w3 = params.add(prefix + ".W3", {hidden, kClassCount}, xavier(hidden, kClassCount));
  layout.b3 = params.add(prefix + ".b3", {kClassCount}, Buffer<T>(kClassCount, T(0)));
  return layout;
}

template <typename T>
Tensor<T> informativeness(const DirectionalStates<T>& raw) {
  return mean_rows(concat<T>({raw.forward, raw.backward}));
}

template <typename T>
Tensor<T> aggregate_match(Tape<T>& tape, const BiLstmLayout& layout, const Tensor<T>& matches) {
  if (matches.rows() == 0) throw DimensionError("aggregate_match: empty match sequence");
  const DirectionalStates<T> states = bilstm(tape, layout, matches);
  return concat<T>({slice_rows(states.forward, matches.rows() - 1, 1), slice_rows(states.backward, 0, 1)});
}

template <typename T>
Tensor<T> combine(const Tensor<T>& info, const Tensor<T>& rt, const Tensor<T>& ra, const Tensor<T>& rc) {
  for (const auto* part : {&info, &rt, &ra, &rc}) {
    if (part->rows() != 1) throw DimensionError("combine: expected row vectors, got " + shape_str(part->shape()));
  }
  if (rt.cols() != ra.cols() || ra.cols() != rc.cols()) {
    throw DimensionError("combine: aggregate widths differ: " + shape_str(rt.shape()) + ", " +
                         shape_str(ra.shape()) + ", " + shape_str(rc.shape()));
  }
  return concat<T>({info, rt, ra, rc});
}

template <typename T>
Tensor<T> classifier_logits(Tape<T>& tape, const ClassifierLayout& layout, const Tensor<T>& r, double rate,
                            Rng* rng) {
  if (r.cols() != layout.input) {
    throw DimensionError("classify: representation width " + std::to_string(r.cols()) + " != " +
                         std::to_string(layout.input));
  }
  Tensor<T> x = dropout(r, rate, rng);
  x = tanh(add_row(matmul(x, tape.param(layout.w1)), tape.param(layout.b1)));
  x = dropout(x, rate, rng);
  x = tanh(add_row(matmul(x, tape.param(layout.w2)), tape.param(layout.b2)));
  x = dropout(x, rate, rng);
  return add_row(matmul(x, tape.param(layout.w3)), tape.param(layout.b3));
}

template <typename T>
Tensor<T> classify(Tape<T>& tape, const ClassifierLayout& layout, const Tensor<T>& r, double rate, Rng* rng) {
  return softmax(classifier_logits(tape, layout, r, rate, rng));
}

#define MTM_INSTANTIATE_AGGREGATOR(T)                                                                \
  template ClassifierLayout add_classifier(ParamSet<T>&, const std::string&, std::size_t, std::size_t, \
                                           Rng&);                                                    \
  template Tensor<T> informativeness(const DirectionalStates<T>&);                                   \
  template Tensor<T> aggregate_match(Tape<T>&, const BiLstmLayout&, const Tensor<T>&);               \
  template Tensor<T> combine(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> classifier_logits(Tape<T>&, const ClassifierLayout&, const Tensor<T>&, double, Rng*); \
  template Tensor<T> classify(Tape<T>&, const ClassifierLayout&, const Tensor<T>&, double, Rng*);

MTM_INSTANTIATE_AGGREGATOR(float)
MTM_INSTANTIATE_AGGREGATOR(double)

}  // namespace mtm
