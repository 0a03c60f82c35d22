#pragma once

// Cosine attention plus multi-perspective matching of a comment against one
// target text (title, abstract, or the joined surrounding comments).

#include <cstddef>
#include <string>
#include <vector>

#include "mtm/encoder.hpp"
#include "mtm/tensor.hpp"

namespace mtm {

// p perspective vectors per direction, each of length H, applied elementwise.
struct PerspectiveLayout {
  ParamId forward = 0;   // [p x H]
  ParamId backward = 0;  // [p x H]
  std::size_t perspectives = 0;
  std::size_t hidden = 0;
};

// Values uniform in [0.5, 1.5].
template <typename T>
PerspectiveLayout add_perspectives(ParamSet<T>& params, const std::string& prefix, std::size_t p,
                                   std::size_t hidden, Rng& rng);

// alpha[i][j] = cos(comment_i, target_j): [Lc x H], [Lt x H] -> [Lc x Lt].
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& comment, const Tensor<T>& target);

// Row i: sum_j alpha_ij target_j / sum_j alpha_ij, with the plain mean of the
// target rows when |sum_j alpha_ij| < 1e-6.
template <typename T>
Tensor<T> attentive_vectors(const Tensor<T>& weights, const Tensor<T>& target);

// out[i][k] = cos(v1_i * W_k, v2_i * W_k): [m x H], [m x H], [p x H] -> [m x p].
template <typename T>
Tensor<T> multi_perspective(const Tensor<T>& v1, const Tensor<T>& v2, const Tensor<T>& perspectives);

// [Lc' x 2p] zero sequence standing in for an ablated or empty target.
template <typename T>
Tensor<T> absent_match(std::size_t pooled_length, std::size_t perspectives);

// Per comment position: [forward p matches ; backward p matches]. A null
// target yields absent_match.
template <typename T>
Tensor<T> match_target(Tape<T>& tape, const EncodedText<T>& comment, const EncodedText<T>* target,
                       const PerspectiveLayout& layout);

// Surrounding comments in order, separated by SEP.
std::vector<TokenId> join_surroundings(const std::vector<std::vector<TokenId>>& surroundings);

// Encodes the joined surroundings once and matches them like any target; no
// surroundings yields absent_match.
template <typename T>
Tensor<T> match_surroundings(Tape<T>& tape, const EncodedText<T>& comment,
                             const std::vector<std::vector<TokenId>>& surroundings, ParamId table,
                             const BiLstmLayout& encoder, const PerspectiveLayout& layout);

}  // namespace mtm
