#pragma once

// The full multi-target matching network: parameter layout and the forward
// pass for one training instance.

#include <cstddef>
#include <cstdint>
#include <string>

#include "mtm/aggregator.hpp"
#include "mtm/corpus.hpp"
#include "mtm/encoder.hpp"
#include "mtm/matcher.hpp"
#include "mtm/tensor.hpp"

namespace mtm {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 200;
  std::size_t hidden = 100;
  std::size_t agg_hidden = 100;
  std::size_t perspectives = 5;
  std::size_t pool_size = 4;
  std::size_t classifier_hidden = 100;
  double embed_scale = 0.5;

  // dim(R) = 2H + 3 * 2Hm
  std::size_t representation_size() const { return 2 * hidden + 6 * agg_hidden; }
  void validate() const;
};

// Targets replaced by the absent-target encoding.
struct Ablation {
  bool no_title = false;
  bool no_abstract = false;
  bool no_surroundings = false;

  // "full", "noTitle", "noAbstract", "noSurroundings", or a '+'-joined mix.
  std::string name() const;
  static Ablation parse(const std::string& name);
  friend bool operator==(const Ablation&, const Ablation&) = default;
};

struct ModelLayout {
  ParamId embedding = 0;
  BiLstmLayout encoder;
  PerspectiveLayout title;
  PerspectiveLayout abstract;
  PerspectiveLayout surroundings;
  BiLstmLayout aggregator;
  ClassifierLayout classifier;
};

template <typename T>
class Model {
 public:
  // Parameters are created in a fixed order from `seed`.
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const ModelLayout& layout() const { return layout_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  template <typename U>
  Model<U> cast() const {
    Model<U> out(config_, 0);
    for (ParamId id = 0; id < params_.size(); ++id) {
      const auto& src = params_[id].value;
      out.params()[id].value.assign(src.begin(), src.end());
    }
    return out;
  }

 private:
  ModelConfig config_;
  ModelLayout layout_;
  ParamSet<T> params_;
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;         // [1 x 2]
  Tensor<T> probabilities;  // [1 x 2], index 1 is HIGH
  CombinedRepresentation<T> parts;
  Tensor<T> title_match;
  Tensor<T> abstract_match;
  Tensor<T> surroundings_match;

  double p_high() const { return static_cast<double>(probabilities[1]); }
};

// Dropout is active only when rng is non-null.
template <typename T>
ForwardResult<T> forward(Tape<T>& tape, const Model<T>& model, const EncodedInstance& instance,
                         const Ablation& ablation, double dropout_rate = 0.0, Rng* rng = nullptr);

template <typename T>
Tensor<T> instance_loss(Tape<T>& tape, const Model<T>& model, const EncodedInstance& instance,
                        const Ablation& ablation, double dropout_rate = 0.0, Rng* rng = nullptr);

// Gradient check of the whole network in double precision on a toy batch of
// three random instances (lengths at most 6, H = Hm = 8, p = 2, ps = 2). The
// loss is the mean cross-entropy with dropout disabled.
struct ToyCheckResult {
  GradCheckReport report;
  std::size_t instances = 0;
  std::size_t parameters = 0;
};

ToyCheckResult toy_grad_check(std::uint64_t seed, double h = 1e-4);

}  // namespace mtm
