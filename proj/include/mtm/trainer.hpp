#pragma once

// Training, evaluation metrics and the ablation/hyperparameter grid.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtm/corpus.hpp"
#include "mtm/model.hpp"

namespace mtm {

struct TrainConfig {
  double learning_rate = 0.001;
  double dropout = 0.2;
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  std::uint64_t seed = 1;
  std::size_t k = 5;
  std::size_t pool_size = 4;
  std::size_t perspectives = 5;
  std::size_t embed_dim = 200;
  std::size_t hidden = 100;
  std::size_t agg_hidden = 100;
  std::size_t classifier_hidden = 100;
  std::size_t min_count = 2;
  double embed_scale = 0.5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Ablation ablation;
  SelectionPolicy policy = SelectionPolicy::nearest;
  SplitFractions fractions;
  std::size_t threads = 1;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
  ModelConfig model_config(std::size_t vocab_size) const;
};

nlohmann::ordered_json config_to_json(const TrainConfig& config);
TrainConfig config_from_json(const nlohmann::json& j);

// --- metrics ---------------------------------------------------------------------

// HIGH is the positive class.
struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  void add(Label truth, Label predicted);
  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Confusion confusion;
};

Metrics compute_metrics(const Confusion& confusion);
Metrics metrics_from_predictions(std::span<const Label> truth, std::span<const Label> predicted);
nlohmann::ordered_json metrics_to_json(const Metrics& m);

struct Evaluation {
  Metrics overall;
  std::map<std::string, Metrics> by_type;
};

// --- data preparation -------------------------------------------------------------

struct PreparedData {
  Vocabulary vocab;
  std::vector<EncodedInstance> train;
  std::vector<EncodedInstance> valid;
  std::vector<EncodedInstance> test;
  FilterReport filter;
};

std::vector<EncodedInstance> encode_news(const std::vector<NewsExample>& news, const Vocabulary& vocab,
                                         std::size_t k, SelectionPolicy policy);

// Length filter, news-level split, vocabulary from the training split only,
// then instance assembly for every split.
PreparedData prepare_data(Corpus corpus, const TrainConfig& config);

// --- optimisation -----------------------------------------------------------------

template <typename T>
class Adam {
 public:
  Adam(const ParamSet<T>& params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  // Parameters with an empty gradient buffer are treated as having zero gradient.
  void step(ParamSet<T>& params, const Gradients<T>& grads);
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<Metrics> valid;
};

struct TrainResult {
  Model<float> model;
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  std::optional<Metrics> best_valid;
};

// Mean cross-entropy over one batch and the matching averaged gradients.
struct BatchGradients {
  double loss = 0.0;
  Gradients<float> grads;
};

BatchGradients batch_gradients(const Model<float>& model, std::span<const EncodedInstance* const> batch,
                               const TrainConfig& config, std::span<const std::uint64_t> dropout_seeds);

using EpochCallback = std::function<void(const EpochLog&)>;
using InitHook = std::function<void(Model<float>&)>;

// Adam on mean batch cross-entropy; keeps the parameters of the epoch with
// the best validation F1 (the last epoch when there is no validation split).
// `init` may overwrite freshly initialised parameters, e.g. with pretrained
// embeddings.
TrainResult train(const PreparedData& data, const TrainConfig& config, const EpochCallback& on_epoch = {},
                  const InitHook& init = {});

std::vector<double> predict(const Model<float>& model, const std::vector<EncodedInstance>& instances,
                            const Ablation& ablation);

// Argmax decisions: HIGH when P(HIGH) > P(LOW).
Evaluation evaluate(const Model<float>& model, const std::vector<EncodedInstance>& instances,
                    const Ablation& ablation, bool group_by_type = false);

// --- experiment grid ------------------------------------------------------------------

struct GridCell {
  std::string table;
  Ablation ablation;
  std::size_t k = 5;
  std::size_t pool_size = 4;
};

struct GridSpec {
  std::vector<GridCell> cells;

  // The ablation table (full / noTitle / noAbstract / noSurroundings at K=5,
  // ps=4), the surrounding-count table (K in {0,1,3,5}, ps=4) and the pooling
  // table (ps in {1,2,3,4}, K=5).
  static GridSpec paper();
  // "ablations=full,noTitle;k=0,5;ps=4": the cross product, in that nesting
  // order. Omitted keys default to full, the base K and the base ps.
  static GridSpec parse(const std::string& spec, const TrainConfig& base);
};

struct GridRow {
  GridCell cell;
  Metrics valid;
  Metrics test;
  std::size_t best_epoch = 0;
};

nlohmann::ordered_json grid_row_to_json(const GridRow& row);

using GridCallback = std::function<void(const GridRow&)>;

// Trains one model per cell with identical seeds. Cells with the same
// (ablation, K, ps) are trained once.
std::vector<GridRow> ablation_sweep(const Corpus& corpus, const TrainConfig& base, const GridSpec& grid,
                                    const GridCallback& on_row = {});

}  // namespace mtm
