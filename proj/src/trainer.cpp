#include "mtm/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

namespace mtm {

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument("train config: " + message);
}

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::size_t parse_size(const std::string& s, const std::string& what) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty() || s.front() == '-') {
    throw std::invalid_argument("grid: bad " + what + " value '" + s + "'");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

void TrainConfig::validate() const {
  require(learning_rate >= 0.0 && learning_rate < 1.0, "learning_rate must lie in [0, 1)");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(batch_size > 0, "batch_size must be positive");
  require(epochs > 0, "epochs must be positive");
  require(pool_size > 0, "ps must be positive");
  require(pool_size <= kMinTextLength, "ps must not exceed the minimum text length (5)");
  require(perspectives > 0, "p must be positive");
  require(embed_dim > 0, "embed_dim must be positive");
  require(hidden > 0, "hidden must be positive");
  require(agg_hidden > 0, "agg_hidden must be positive");
  require(classifier_hidden > 0, "classifier_hidden must be positive");
  require(min_count > 0, "min_count must be positive");
  require(embed_scale > 0.0, "embed_scale must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0, "beta1 must lie in [0, 1)");
  require(beta2 >= 0.0 && beta2 < 1.0, "beta2 must lie in [0, 1)");
  require(adam_eps > 0.0, "adam_eps must be positive");
  require(threads > 0, "threads must be positive");
  const double total = fractions.train + fractions.valid + fractions.test;
  require(fractions.train > 0.0 && fractions.valid >= 0.0 && fractions.test >= 0.0 &&
              std::abs(total - 1.0) < 1e-9,
          "split fractions must be non-negative, with a positive train share, and sum to 1");
}

ModelConfig TrainConfig::model_config(std::size_t vocab_size) const {
  ModelConfig m;
  m.vocab_size = vocab_size;
  m.embed_dim = embed_dim;
  m.hidden = hidden;
  m.agg_hidden = agg_hidden;
  m.perspectives = perspectives;
  m.pool_size = pool_size;
  m.classifier_hidden = classifier_hidden;
  m.embed_scale = embed_scale;
  return m;
}

nlohmann::ordered_json config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["lr"] = c.learning_rate;
  j["dropout"] = c.dropout;
  j["batch"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["k"] = c.k;
  j["ps"] = c.pool_size;
  j["p"] = c.perspectives;
  j["embed_dim"] = c.embed_dim;
  j["hidden"] = c.hidden;
  j["agg_hidden"] = c.agg_hidden;
  j["classifier_hidden"] = c.classifier_hidden;
  j["min_count"] = c.min_count;
  j["embed_scale"] = c.embed_scale;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["ablation"] = c.ablation.name();
  j["policy"] = policy_name(c.policy);
  j["split"] = {{"train", c.fractions.train}, {"valid", c.fractions.valid}, {"test", c.fractions.test}};
  j["threads"] = c.threads;
  return j;
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("lr", c.learning_rate);
  get("dropout", c.dropout);
  get("batch", c.batch_size);
  get("epochs", c.epochs);
  get("seed", c.seed);
  get("k", c.k);
  get("ps", c.pool_size);
  get("p", c.perspectives);
  get("embed_dim", c.embed_dim);
  get("hidden", c.hidden);
  get("agg_hidden", c.agg_hidden);
  get("classifier_hidden", c.classifier_hidden);
  get("min_count", c.min_count);
  get("embed_scale", c.embed_scale);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("adam_eps", c.adam_eps);
  get("threads", c.threads);
  if (j.contains("ablation")) c.ablation = Ablation::parse(j.at("ablation").get<std::string>());
  if (j.contains("policy")) c.policy = parse_policy(j.at("policy").get<std::string>());
  if (j.contains("split")) {
    const auto& s = j.at("split");
    s.at("train").get_to(c.fractions.train);
    s.at("valid").get_to(c.fractions.valid);
    s.at("test").get_to(c.fractions.test);
  }
  return c;
}

// --- metrics ---------------------------------------------------------------------

void Confusion::add(Label truth, Label predicted) {
  const bool t = truth == Label::high;
  const bool p = predicted == Label::high;
  if (t && p) ++tp;
  else if (!t && p) ++fp;
  else if (t && !p) ++fn;
  else ++tn;
}

Metrics compute_metrics(const Confusion& c) {
  Metrics m;
  m.confusion = c;
  const double total = static_cast<double>(c.total());
  if (total > 0) m.accuracy = static_cast<double>(c.tp + c.tn) / total;
  if (c.tp + c.fp > 0) m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) m.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (m.precision + m.recall > 0) m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

Metrics metrics_from_predictions(std::span<const Label> truth, std::span<const Label> predicted) {
  if (truth.size() != predicted.size()) {
    throw std::invalid_argument("metrics: " + std::to_string(truth.size()) + " labels but " +
                                std::to_string(predicted.size()) + " predictions");
  }
  Confusion c;
  for (std::size_t i = 0; i < truth.size(); ++i) c.add(truth[i], predicted[i]);
  return compute_metrics(c);
}

nlohmann::ordered_json metrics_to_json(const Metrics& m) {
  nlohmann::ordered_json j;
  j["accuracy"] = m.accuracy;
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["f1"] = m.f1;
  j["tp"] = m.confusion.tp;
  j["fp"] = m.confusion.fp;
  j["tn"] = m.confusion.tn;
  j["fn"] = m.confusion.fn;
  return j;
}

// --- data preparation -------------------------------------------------------------

std::vector<EncodedInstance> encode_news(const std::vector<NewsExample>& news, const Vocabulary& vocab,
                                         std::size_t k, SelectionPolicy policy) {
  std::vector<EncodedInstance> out;
  for (const auto& item : news) {
    for (const auto& inst : make_instances(item, k, policy)) out.push_back(encode_instance(inst, vocab));
  }
  return out;
}

PreparedData prepare_data(Corpus corpus, const TrainConfig& config) {
  PreparedData data;
  data.filter = filter_lengths(corpus);
  const Splits s = split(corpus, config.fractions, config.seed);
  if (s.train.empty()) throw std::invalid_argument("prepare: training split is empty");
  data.vocab = build_vocab(s.train, config.min_count);
  data.train = encode_news(s.train, data.vocab, config.k, config.policy);
  data.valid = encode_news(s.valid, data.vocab, config.k, config.policy);
  data.test = encode_news(s.test, data.vocab, config.k, config.policy);
  if (data.train.empty()) throw std::invalid_argument("prepare: training split has no comments");
  return data;
}

// --- optimisation -----------------------------------------------------------------

template <typename T>
Adam<T>::Adam(const ParamSet<T>& params, double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params) {
    m_.emplace_back(p.value.size(), 0.0);
    v_.emplace_back(p.value.size(), 0.0);
  }
}

template <typename T>
void Adam<T>::step(ParamSet<T>& params, const Gradients<T>& grads) {
  if (params.size() != m_.size()) throw std::invalid_argument("adam: parameter set changed size");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (ParamId id = 0; id < params.size(); ++id) {
    auto& value = params[id].value;
    auto& m = m_[id];
    auto& v = v_[id];
    const bool has_grad = id < grads.size() && !grads[id].empty();
    if (has_grad && grads[id].size() != value.size()) {
      throw std::invalid_argument("adam: gradient size mismatch for " + params[id].name);
    }
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = has_grad ? static_cast<double>(grads[id][i]) : 0.0;
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      if (m[i] == 0.0) continue;
      const double update = lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      value[i] = static_cast<T>(static_cast<double>(value[i]) - update);
    }
  }
}

template class Adam<float>;
template class Adam<double>;

namespace {

std::uint64_t dropout_seed(std::uint64_t seed, std::size_t epoch, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(index)};
  std::array<std::uint32_t, 2> words{};
  seq.generate(words.begin(), words.end());
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

// Adds per-instance gradients for batch[begin, end) into acc; returns summed loss.
double accumulate(const Model<float>& model, std::span<const EncodedInstance* const> batch,
                  std::span<const std::uint64_t> seeds, std::size_t begin, std::size_t end,
                  const TrainConfig& config, std::vector<std::vector<double>>& acc) {
  double loss = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    Tape<float> tape(model.params());
    Rng rng(seeds[i]);
    Rng* r = config.dropout > 0.0 ? &rng : nullptr;
    const Tensor<float> l = instance_loss(tape, model, *batch[i], config.ablation, config.dropout, r);
    loss += static_cast<double>(l.item());
    tape.backward(l);
    const auto& g = tape.gradients();
    for (ParamId id = 0; id < g.size(); ++id) {
      if (g[id].empty()) continue;
      auto& a = acc[id];
      for (std::size_t j = 0; j < a.size(); ++j) a[j] += static_cast<double>(g[id][j]);
    }
  }
  return loss;
}

}  // namespace

BatchGradients batch_gradients(const Model<float>& model, std::span<const EncodedInstance* const> batch,
                               const TrainConfig& config, std::span<const std::uint64_t> seeds) {
  if (batch.empty()) throw std::invalid_argument("batch_gradients: empty batch");
  if (seeds.size() != batch.size()) throw std::invalid_argument("batch_gradients: one seed per instance");
  const auto& params = model.params();
  const std::size_t workers = std::min(config.threads, batch.size());

  auto fresh = [&] {
    std::vector<std::vector<double>> acc;
    for (const auto& p : params) acc.emplace_back(p.value.size(), 0.0);
    return acc;
  };

  std::vector<std::vector<std::vector<double>>> partial(workers);
  std::vector<double> losses(workers, 0.0);
  const std::size_t chunk = (batch.size() + workers - 1) / workers;
  auto run = [&](std::size_t w) {
    partial[w] = fresh();
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(batch.size(), begin + chunk);
    if (begin < end) losses[w] = accumulate(model, batch, seeds, begin, end, config, partial[w]);
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& t : pool) t.join();
  }

  // Merge in worker order so the sum does not depend on scheduling.
  const double inv = 1.0 / static_cast<double>(batch.size());
  BatchGradients out;
  out.grads.resize(params.size());
  for (ParamId id = 0; id < params.size(); ++id) {
    out.grads[id].assign(params[id].value.size(), 0.0f);
    for (std::size_t j = 0; j < out.grads[id].size(); ++j) {
      double s = 0.0;
      for (std::size_t w = 0; w < workers; ++w) s += partial[w][id][j];
      out.grads[id][j] = static_cast<float>(s * inv);
    }
  }
  for (std::size_t w = 0; w < workers; ++w) out.loss += losses[w];
  out.loss *= inv;
  return out;
}

TrainResult train(const PreparedData& data, const TrainConfig& config, const EpochCallback& on_epoch,
                  const InitHook& init) {
  config.validate();
  if (data.train.empty()) throw std::invalid_argument("train: training split is empty");

  TrainResult result{Model<float>(config.model_config(data.vocab.size()), config.seed), {}, 0, std::nullopt};
  Model<float>& model = result.model;
  if (init) init(model);
  Adam<float> adam(model.params(), config.learning_rate, config.beta1, config.beta2, config.adam_eps);

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(config.seed ^ 0x5bd1e995ULL);

  std::vector<Buffer<float>> best_values;
  double best_f1 = -1.0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<const EncodedInstance*> batch;
      std::vector<std::uint64_t> seeds;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(&data.train[order[i]]);
        seeds.push_back(dropout_seed(config.seed, epoch, i));
      }
      BatchGradients bg = batch_gradients(model, batch, config, seeds);
      if (!std::isfinite(bg.loss)) {
        throw TrainingDiverged("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(batches + 1));
      }
      adam.step(model.params(), bg.grads);
      loss_sum += bg.loss;
      ++batches;
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(batches);
    bool better = data.valid.empty();
    if (!data.valid.empty()) {
      log.valid = evaluate(model, data.valid, config.ablation).overall;
      better = log.valid->f1 > best_f1;
    }
    if (better) {
      best_f1 = log.valid ? log.valid->f1 : best_f1;
      result.best_epoch = epoch;
      result.best_valid = log.valid;
      best_values.clear();
      for (const auto& p : model.params()) best_values.push_back(p.value);
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }

  for (ParamId id = 0; id < model.params().size(); ++id) model.params()[id].value = best_values[id];
  return result;
}

std::vector<double> predict(const Model<float>& model, const std::vector<EncodedInstance>& instances,
                            const Ablation& ablation) {
  std::vector<double> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) {
    Tape<float> tape(model.params(), false);
    out.push_back(forward(tape, model, inst, ablation).p_high());
  }
  return out;
}

Evaluation evaluate(const Model<float>& model, const std::vector<EncodedInstance>& instances,
                    const Ablation& ablation, bool group_by_type) {
  if (instances.empty()) throw std::invalid_argument("evaluate: empty split");
  const std::vector<double> p = predict(model, instances, ablation);
  Confusion overall;
  std::map<std::string, Confusion> per_type;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const Label predicted = p[i] > 0.5 ? Label::high : Label::low;
    overall.add(instances[i].label, predicted);
    if (group_by_type) per_type[instances[i].news_type].add(instances[i].label, predicted);
  }
  Evaluation e;
  e.overall = compute_metrics(overall);
  for (const auto& [type, c] : per_type) e.by_type[type] = compute_metrics(c);
  return e;
}

// --- experiment grid ------------------------------------------------------------------

GridSpec GridSpec::paper() {
  GridSpec g;
  for (const char* a : {"full", "noTitle", "noAbstract", "noSurroundings"}) {
    g.cells.push_back({"ablation", Ablation::parse(a), 5, 4});
  }
  for (std::size_t k : {0, 1, 3, 5}) g.cells.push_back({"surroundings", Ablation{}, k, 4});
  for (std::size_t ps : {1, 2, 3, 4}) g.cells.push_back({"pooling", Ablation{}, 5, ps});
  return g;
}

GridSpec GridSpec::parse(const std::string& spec, const TrainConfig& base) {
  if (spec == "paper") return paper();
  std::vector<Ablation> ablations{base.ablation};
  std::vector<std::size_t> ks{base.k};
  std::vector<std::size_t> pss{base.pool_size};
  std::set<std::string> seen;
  for (const auto& clause : split_list(spec, ';')) {
    const auto eq = clause.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("grid: expected key=values, got '" + clause + "'");
    const std::string key = clause.substr(0, eq);
    const auto values = split_list(clause.substr(eq + 1), ',');
    if (values.empty()) throw std::invalid_argument("grid: no values for '" + key + "'");
    if (!seen.insert(key).second) throw std::invalid_argument("grid: duplicate key '" + key + "'");
    if (key == "ablations") {
      ablations.clear();
      for (const auto& v : values) ablations.push_back(Ablation::parse(v));
    } else if (key == "k") {
      ks.clear();
      for (const auto& v : values) ks.push_back(parse_size(v, "k"));
    } else if (key == "ps") {
      pss.clear();
      for (const auto& v : values) pss.push_back(parse_size(v, "ps"));
    } else {
      throw std::invalid_argument("grid: unknown key '" + key + "' (expected ablations, k or ps)");
    }
  }
  if (seen.empty()) throw std::invalid_argument("grid: empty spec");
  GridSpec g;
  for (const auto& a : ablations)
    for (std::size_t k : ks)
      for (std::size_t ps : pss) g.cells.push_back({"custom", a, k, ps});
  return g;
}

nlohmann::ordered_json grid_row_to_json(const GridRow& row) {
  nlohmann::ordered_json j;
  j["table"] = row.cell.table;
  j["ablation"] = row.cell.ablation.name();
  j["k"] = row.cell.k;
  j["ps"] = row.cell.pool_size;
  j["best_epoch"] = row.best_epoch;
  j["valid"] = metrics_to_json(row.valid);
  j["test"] = metrics_to_json(row.test);
  return j;
}

std::vector<GridRow> ablation_sweep(const Corpus& corpus, const TrainConfig& base, const GridSpec& grid,
                                    const GridCallback& on_row) {
  using Key = std::tuple<bool, bool, bool, std::size_t, std::size_t>;
  std::map<Key, GridRow> cache;
  std::vector<GridRow> rows;
  for (const auto& cell : grid.cells) {
    const Key key{cell.ablation.no_title, cell.ablation.no_abstract, cell.ablation.no_surroundings, cell.k,
                  cell.pool_size};
    auto it = cache.find(key);
    if (it == cache.end()) {
      TrainConfig config = base;
      config.ablation = cell.ablation;
      config.k = cell.k;
      config.pool_size = cell.pool_size;
      config.validate();
      const PreparedData data = prepare_data(corpus, config);
      const TrainResult trained = train(data, config);
      GridRow row;
      row.best_epoch = trained.best_epoch;
      if (!data.valid.empty()) row.valid = evaluate(trained.model, data.valid, cell.ablation).overall;
      if (!data.test.empty()) row.test = evaluate(trained.model, data.test, cell.ablation).overall;
      it = cache.emplace(key, row).first;
    }
    GridRow row = it->second;
    row.cell = cell;
    rows.push_back(row);
    if (on_row) on_row(row);
  }
  return rows;
}

}  // namespace mtm
