#pragma once

// Token embedding, bidirectional LSTM encoding and overlapping mean-pooling.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>

#include "mtm/corpus.hpp"
#include "mtm/tensor.hpp"

namespace mtm {

// Gate columns of the weight matrices are ordered [input | forget | cell | output].
struct LstmLayout {
  ParamId input_weights = 0;      // [input x 4H]
  ParamId recurrent_weights = 0;  // [H x 4H]
  ParamId bias = 0;               // [4H]
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
};

struct BiLstmLayout {
  LstmLayout forward;
  LstmLayout backward;
};

// Weights uniform in +-1/sqrt(H), forget-gate bias 1, other biases 0.
template <typename T>
LstmLayout add_lstm(ParamSet<T>& params, const std::string& prefix, std::size_t input,
                    std::size_t hidden, Rng& rng);

template <typename T>
BiLstmLayout add_bilstm(ParamSet<T>& params, const std::string& prefix, std::size_t input,
                        std::size_t hidden, Rng& rng);

// Row 0 (PAD) is zero; other rows uniform in +-scale.
template <typename T>
ParamId add_embedding(ParamSet<T>& params, const std::string& name, std::size_t vocab,
                      std::size_t dim, T scale, Rng& rng);

template <typename T>
struct DirectionalStates {
  Tensor<T> forward;   // [L x H], row i depends on tokens 0..i
  Tensor<T> backward;  // [L x H], row i depends on tokens i..L-1
};

template <typename T>
struct EncodedText {
  DirectionalStates<T> raw;
  DirectionalStates<T> pooled;  // [(L - ps + 1) x H] each
  std::size_t pool_size = 1;

  std::size_t length() const { return raw.forward.rows(); }
  std::size_t pooled_length() const { return pooled.forward.rows(); }
};

// [L x d] lookup; PAD rows are zero and never receive gradient.
template <typename T>
Tensor<T> embed(Tape<T>& tape, ParamId table, std::span<const TokenId> ids);

// Runs one LSTM direction over the rows of `inputs` with zero initial state.
// Output rows are aligned with input positions in both directions.
template <typename T>
Tensor<T> lstm(Tape<T>& tape, const LstmLayout& layout, const Tensor<T>& inputs, bool reverse);

template <typename T>
DirectionalStates<T> bilstm(Tape<T>& tape, const BiLstmLayout& layout, const Tensor<T>& inputs);

// Both directions average the same span of ps tokens, i..i+ps-1, so pooled
// row i of each direction covers identical positions.
template <typename T>
DirectionalStates<T> mean_pool(const DirectionalStates<T>& states, std::size_t ps);

template <typename T>
EncodedText<T> encode_text(Tape<T>& tape, ParamId table, const BiLstmLayout& layout,
                           std::span<const TokenId> ids, std::size_t ps);

class EmbeddingFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Reads "mtm-emb-v1 V d" followed by V lines "token f1 ... fd" and copies the
// vectors of tokens present in `vocab` into the table. Returns how many rows
// were filled.
template <typename T>
std::size_t load_pretrained_embeddings(std::istream& in, const Vocabulary& vocab, Parameter<T>& table);

}  // namespace mtm
