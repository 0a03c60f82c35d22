#include "mtm/model.hpp"

#include <random>
#include <sstream>

namespace mtm {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw std::invalid_argument(std::string("model config: ") + name + " must be positive");
  };
  positive(vocab_size, "vocab_size");
  positive(embed_dim, "embed_dim");
  positive(hidden, "hidden");
  positive(agg_hidden, "agg_hidden");
  positive(perspectives, "perspectives");
  positive(pool_size, "pool_size");
  positive(classifier_hidden, "classifier_hidden");
  if (vocab_size <= Vocabulary::kReserved) throw std::invalid_argument("model config: vocabulary has no entries");
  if (!(embed_scale > 0.0)) throw std::invalid_argument("model config: embed_scale must be positive");
}

std::string Ablation::name() const {
  std::vector<std::string> parts;
  if (no_title) parts.emplace_back("noTitle");
  if (no_abstract) parts.emplace_back("noAbstract");
  if (no_surroundings) parts.emplace_back("noSurroundings");
  if (parts.empty()) return "full";
  std::string out = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) out += "+" + parts[i];
  return out;
}

Ablation Ablation::parse(const std::string& name) {
  Ablation a;
  if (name == "full") return a;
  std::istringstream in(name);
  std::string part;
  while (std::getline(in, part, '+')) {
    if (part == "noTitle") a.no_title = true;
    else if (part == "noAbstract") a.no_abstract = true;
    else if (part == "noSurroundings") a.no_surroundings = true;
    else throw std::invalid_argument("unknown ablation: " + part);
  }
  return a;
}

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  layout_.embedding = add_embedding<T>(params_, "embedding", config_.vocab_size, config_.embed_dim,
                                       static_cast<T>(config_.embed_scale), rng);
  layout_.encoder = add_bilstm(params_, "encoder", config_.embed_dim, config_.hidden, rng);
  layout_.title = add_perspectives(params_, "match.title", config_.perspectives, config_.hidden, rng);
  layout_.abstract = add_perspectives(params_, "match.abstract", config_.perspectives, config_.hidden, rng);
  layout_.surroundings =
      add_perspectives(params_, "match.surroundings", config_.perspectives, config_.hidden, rng);
  layout_.aggregator = add_bilstm(params_, "aggregator", 2 * config_.perspectives, config_.agg_hidden, rng);
  layout_.classifier =
      add_classifier(params_, "classifier", config_.representation_size(), config_.classifier_hidden, rng);
}

template <typename T>
ForwardResult<T> forward(Tape<T>& tape, const Model<T>& model, const EncodedInstance& instance,
                         const Ablation& ablation, double dropout_rate, Rng* rng) {
  const ModelLayout& l = model.layout();
  const std::size_t ps = model.config().pool_size;

  const EncodedText<T> comment = encode_text(tape, l.embedding, l.encoder, instance.comment, ps);

  ForwardResult<T> out;
  if (ablation.no_title) {
    out.title_match = match_target<T>(tape, comment, nullptr, l.title);
  } else {
    const EncodedText<T> title = encode_text(tape, l.embedding, l.encoder, instance.title, ps);
    out.title_match = match_target(tape, comment, &title, l.title);
  }
  if (ablation.no_abstract) {
    out.abstract_match = match_target<T>(tape, comment, nullptr, l.abstract);
  } else {
    const EncodedText<T> abstract = encode_text(tape, l.embedding, l.encoder, instance.abstract, ps);
    out.abstract_match = match_target(tape, comment, &abstract, l.abstract);
  }
  if (ablation.no_surroundings) {
    out.surroundings_match = match_target<T>(tape, comment, nullptr, l.surroundings);
  } else {
    out.surroundings_match =
        match_surroundings(tape, comment, instance.surroundings, l.embedding, l.encoder, l.surroundings);
  }

  auto& parts = out.parts;
  parts.info = informativeness(comment.raw);
  parts.rt = aggregate_match(tape, l.aggregator, out.title_match);
  parts.ra = aggregate_match(tape, l.aggregator, out.abstract_match);
  parts.rc = aggregate_match(tape, l.aggregator, out.surroundings_match);
  parts.r = combine(parts.info, parts.rt, parts.ra, parts.rc);

  out.logits = classifier_logits(tape, l.classifier, parts.r, dropout_rate, rng);
  out.probabilities = softmax(out.logits);
  return out;
}

template <typename T>
Tensor<T> instance_loss(Tape<T>& tape, const Model<T>& model, const EncodedInstance& instance,
                        const Ablation& ablation, double dropout_rate, Rng* rng) {
  const auto result = forward(tape, model, instance, ablation, dropout_rate, rng);
  return softmax_cross_entropy(result.logits, static_cast<std::size_t>(instance.label));
}

template class Model<float>;
template class Model<double>;

#define MTM_INSTANTIATE_MODEL(T)                                                                       \
  template ForwardResult<T> forward(Tape<T>&, const Model<T>&, const EncodedInstance&, const Ablation&, \
                                    double, Rng*);                                                     \
  template Tensor<T> instance_loss(Tape<T>&, const Model<T>&, const EncodedInstance&, const Ablation&,  \
                                   double, Rng*);

MTM_INSTANTIATE_MODEL(float)
MTM_INSTANTIATE_MODEL(double)

ToyCheckResult toy_grad_check(std::uint64_t seed, double h) {
  ModelConfig config;
  config.vocab_size = 12;
  config.embed_dim = 4;
  config.hidden = 8;
  config.agg_hidden = 8;
  config.perspectives = 2;
  config.pool_size = 2;
  config.classifier_hidden = 8;
  Model<double> model(config, seed);

  Rng rng(seed + 1);
  std::uniform_int_distribution<TokenId> token(Vocabulary::kReserved, config.vocab_size - 1);
  std::uniform_int_distribution<std::size_t> length(config.pool_size, 6);
  auto text = [&] {
    std::vector<TokenId> ids(length(rng));
    for (auto& id : ids) id = token(rng);
    return ids;
  };
  std::vector<EncodedInstance> batch(3);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto& inst = batch[i];
    inst.comment = text();
    inst.title = text();
    inst.abstract = text();
    // Two, one and zero surrounding comments.
    for (std::size_t s = 0; s + i < 2; ++s) inst.surroundings.push_back(text());
    inst.label = i % 2 == 0 ? Label::high : Label::low;
  }

  const ScalarGraph<double> loss = [&](Tape<double>& tape) {
    std::vector<Tensor<double>> losses;
    for (const auto& inst : batch) {
      losses.push_back(reshape(instance_loss(tape, model, inst, Ablation{}), {1, 1}));
    }
    return scale(sum(concat(losses)), 1.0 / static_cast<double>(batch.size()));
  };
  ToyCheckResult out;
  out.report = grad_check(loss, model.params(), h);
  out.instances = batch.size();
  out.parameters = model.params().total_size();
  return out;
}

}  // namespace mtm
