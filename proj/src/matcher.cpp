#include "mtm/matcher.hpp"

namespace mtm {

template <typename T>
PerspectiveLayout add_perspectives(ParamSet<T>& params, const std::string& prefix, std::size_t p,
                                   std::size_t hidden, Rng& rng) {
  if (p == 0) throw std::invalid_argument("number of perspectives must be >= 1");
  std::uniform_real_distribution<double> dist(0.5, 1.5);
  auto draw = [&] {
    Buffer<T> w(p * hidden);
    for (auto& x : w) x = static_cast<T>(dist(rng));
    return w;
  };
  PerspectiveLayout layout;
  layout.perspectives = p;
  layout.hidden = hidden;
  layout.forward = params.add(prefix + ".fwd", {p, hidden}, draw());
  layout.backward = params.add(prefix + ".bwd", {p, hidden}, draw());
  return layout;
}

template <typename T>
Tensor<T> attention_weights(const Tensor<T>& comment, const Tensor<T>& target) {
  return cosine_matrix(comment, target);
}

template <typename T>
Tensor<T> attentive_vectors(const Tensor<T>& weights, const Tensor<T>& target) {
  return attentive_sum(weights, target);
}

template <typename T>
Tensor<T> multi_perspective(const Tensor<T>& v1, const Tensor<T>& v2, const Tensor<T>& perspectives) {
  const std::size_t p = perspectives.rows();
  std::vector<Tensor<T>> columns;
  columns.reserve(p);
  for (std::size_t k = 0; k < p; ++k) {
    const Tensor<T> w = slice_rows(perspectives, k, 1);
    columns.push_back(cosine_rows(mul_row(v1, w), mul_row(v2, w)));
  }
  return concat(columns);
}

template <typename T>
Tensor<T> absent_match(std::size_t pooled_length, std::size_t perspectives) {
  return Tensor<T>::zeros({pooled_length, 2 * perspectives});
}

template <typename T>
Tensor<T> match_target(Tape<T>& tape, const EncodedText<T>& comment, const EncodedText<T>* target,
                       const PerspectiveLayout& layout) {
  if (comment.pooled_length() == 0) throw DimensionError("match_target: empty comment");
  if (target == nullptr) return absent_match<T>(comment.pooled_length(), layout.perspectives);

  auto direction = [&](const Tensor<T>& c, const Tensor<T>& t, ParamId weights) {
    const Tensor<T> alpha = attention_weights(c, t);
    const Tensor<T> attended = attentive_vectors(alpha, t);
    return multi_perspective(c, attended, tape.param(weights));
  };
  return concat<T>({direction(comment.pooled.forward, target->pooled.forward, layout.forward),
                    direction(comment.pooled.backward, target->pooled.backward, layout.backward)});
}

std::vector<TokenId> join_surroundings(const std::vector<std::vector<TokenId>>& surroundings) {
  std::vector<TokenId> joined;
  for (std::size_t i = 0; i < surroundings.size(); ++i) {
    if (i) joined.push_back(Vocabulary::kSep);
    joined.insert(joined.end(), surroundings[i].begin(), surroundings[i].end());
  }
  return joined;
}

template <typename T>
Tensor<T> match_surroundings(Tape<T>& tape, const EncodedText<T>& comment,
                             const std::vector<std::vector<TokenId>>& surroundings, ParamId table,
                             const BiLstmLayout& encoder, const PerspectiveLayout& layout) {
  const std::vector<TokenId> joined = join_surroundings(surroundings);
  if (joined.empty()) return absent_match<T>(comment.pooled_length(), layout.perspectives);
  const EncodedText<T> target = encode_text(tape, table, encoder, joined, comment.pool_size);
  return match_target(tape, comment, &target, layout);
}

#define MTM_INSTANTIATE_MATCHER(T)                                                                     \
  template PerspectiveLayout add_perspectives(ParamSet<T>&, const std::string&, std::size_t, std::size_t, \
                                              Rng&);                                                   \
  template Tensor<T> attention_weights(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> attentive_vectors(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> multi_perspective(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> absent_match(std::size_t, std::size_t);                                           \
  template Tensor<T> match_target(Tape<T>&, const EncodedText<T>&, const EncodedText<T>*,              \
                                  const PerspectiveLayout&);                                           \
  template Tensor<T> match_surroundings(Tape<T>&, const EncodedText<T>&,                               \
                                        const std::vector<std::vector<TokenId>>&, ParamId,             \
                                        const BiLstmLayout&, const PerspectiveLayout&);

MTM_INSTANTIATE_MATCHER(float)
MTM_INSTANTIATE_MATCHER(double)

}  // namespace mtm
