#pragma once

// Combination of the informativeness, consistency and novelty signals and the
// feed-forward output layer.

#include <cstddef>
#include <string>

#include "mtm/encoder.hpp"
#include "mtm/tensor.hpp"

namespace mtm {

// R -> hidden -> hidden -> 2 logits, tanh between layers.
struct ClassifierLayout {
  ParamId w1 = 0, b1 = 0;
  ParamId w2 = 0, b2 = 0;
  ParamId w3 = 0, b3 = 0;
  std::size_t input = 0;
  std::size_t hidden = 0;
};

inline constexpr std::size_t kClassCount = 2;

// Xavier-uniform weights, zero biases.
template <typename T>
ClassifierLayout add_classifier(ParamSet<T>& params, const std::string& prefix, std::size_t input,
                                std::size_t hidden, Rng& rng);

// Mean over positions of [forward ; backward] raw states: [1 x 2H].
template <typename T>
Tensor<T> informativeness(const DirectionalStates<T>& raw);

// [last forward state ; first backward state] of the aggregation Bi-LSTM run
// over the match sequence: [1 x 2Hm].
template <typename T>
Tensor<T> aggregate_match(Tape<T>& tape, const BiLstmLayout& layout, const Tensor<T>& matches);

template <typename T>
struct CombinedRepresentation {
  Tensor<T> info;  // R_info
  Tensor<T> rt;    // title aggregate
  Tensor<T> ra;    // abstract aggregate
  Tensor<T> rc;    // surroundings aggregate
  Tensor<T> r;     // [info ; rt ; ra ; rc]
};

// R = [info ; rt ; ra ; rc]; rt, ra and rc must share one width.
template <typename T>
Tensor<T> combine(const Tensor<T>& info, const Tensor<T>& rt, const Tensor<T>& ra, const Tensor<T>& rc);

// Logits [1 x 2]. Dropout at `rate` is applied to R and to both hidden
// activations when rng is non-null.
template <typename T>
Tensor<T> classifier_logits(Tape<T>& tape, const ClassifierLayout& layout, const Tensor<T>& r, double rate,
                            Rng* rng);

// softmax(classifier_logits(...)) as [1 x 2]: index 0 LOW, index 1 HIGH.
template <typename T>
Tensor<T> classify(Tape<T>& tape, const ClassifierLayout& layout, const Tensor<T>& r, double rate, Rng* rng);

}  // namespace mtm
