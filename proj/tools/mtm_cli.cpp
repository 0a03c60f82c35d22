// mtm: command-line front end. Every report line on stdout is one JSON
// object; errors go to stderr as one JSON object and a distinct exit code.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtm/checkpoint.hpp"
#include "mtm/corpus.hpp"
#include "mtm/encoder.hpp"
#include "mtm/model.hpp"
#include "mtm/trainer.hpp"

namespace {

using nlohmann::ordered_json;

enum Exit : int {
  kOk = 0,
  kGradCheckFailed = 1,
  kUsage = 2,
  kConfig = 3,
  kIo = 4,
  kCorpus = 5,
  kCheckpoint = 6,
  kDiverged = 7,
  kInternal = 8,
};

struct Failure {
  int code;
  std::string kind;
  std::string message;
};

void emit(const ordered_json& j) { std::cout << j.dump() << '\n' << std::flush; }

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void add_model_flags(CLI::App* cmd, mtm::TrainConfig& c, std::string& policy) {
  cmd->add_option("--lr", c.learning_rate, "Adam learning rate")->capture_default_str();
  cmd->add_option("--dropout", c.dropout, "Dropout rate")->capture_default_str();
  cmd->add_option("--batch", c.batch_size, "Batch size")->capture_default_str();
  cmd->add_option("--epochs", c.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--k", c.k, "Surrounding comments per instance")->capture_default_str();
  cmd->add_option("--ps", c.pool_size, "Pooling window")->capture_default_str();
  cmd->add_option("--p", c.perspectives, "Perspectives per target")->capture_default_str();
  cmd->add_option("--seed", c.seed, "Seed for split, init, shuffling and dropout")->capture_default_str();
  cmd->add_option("--embed-dim", c.embed_dim, "Word embedding size")->capture_default_str();
  cmd->add_option("--hidden", c.hidden, "Encoder LSTM size")->capture_default_str();
  cmd->add_option("--agg-hidden", c.agg_hidden, "Aggregation LSTM size")->capture_default_str();
  cmd->add_option("--classifier-hidden", c.classifier_hidden, "Hidden layer size")->capture_default_str();
  cmd->add_option("--min-count", c.min_count, "Vocabulary frequency cutoff")->capture_default_str();
  cmd->add_option("--policy", policy, "Surrounding selection: nearest or top-liked")->capture_default_str();
  cmd->add_option("--threads", c.threads, "Gradient worker threads")->capture_default_str();
}

mtm::Corpus read_corpus(const std::string& path) {
  std::ifstream probe(path);
  if (!probe) throw std::ios_base::failure("cannot open corpus: " + path);
  return mtm::load_corpus(path);
}

mtm::Splits recompute_splits(const mtm::Corpus& raw, const mtm::TrainConfig& config) {
  mtm::Corpus corpus = raw;
  mtm::filter_lengths(corpus);
  return mtm::split(corpus, config.fractions, config.seed);
}

int run_synth(const mtm::SynthOptions& options, const std::string& out) {
  emit({{"command", "synth"},
        {"seed", options.seed},
        {"news", options.news},
        {"comments_per_news", options.comments_per_news},
        {"out", out}});
  const mtm::Corpus corpus = mtm::synth_generate(options);
  mtm::write_file_atomic(out, [&](std::ostream& os) { mtm::write_corpus(corpus, os); });
  std::size_t high = 0;
  for (const auto& n : corpus.news)
    for (const auto& c : n.comments) high += c.label == mtm::Label::high;
  emit({{"event", "synth"}, {"news", corpus.news.size()}, {"comments", corpus.comment_count()}, {"high", high}});
  return kOk;
}

ordered_json epoch_json(const mtm::EpochLog& log, double seconds) {
  ordered_json j{{"event", "epoch"}, {"epoch", log.epoch}, {"train_loss", log.train_loss}};
  if (log.valid) j["valid"] = mtm::metrics_to_json(*log.valid);
  j["seconds"] = seconds;
  return j;
}

int run_train(mtm::TrainConfig config, const std::string& corpus_path, const std::string& ckpt,
              const std::string& embeddings) {
  emit({{"command", "train"},
        {"corpus", corpus_path},
        {"out_ckpt", ckpt},
        {"embeddings", embeddings},
        {"config", mtm::config_to_json(config)}});
  config.validate();

  const mtm::Corpus corpus = read_corpus(corpus_path);
  const mtm::PreparedData data = mtm::prepare_data(corpus, config);
  emit({{"event", "data"},
        {"vocab", data.vocab.size()},
        {"train", data.train.size()},
        {"valid", data.valid.size()},
        {"test", data.test.size()},
        {"dropped_news", data.filter.dropped_news},
        {"dropped_comments", data.filter.dropped_comments}});

  mtm::InitHook init;
  if (!embeddings.empty()) {
    init = [&](mtm::Model<float>& model) {
      std::ifstream in(embeddings);
      if (!in) throw std::ios_base::failure("cannot open embeddings: " + embeddings);
      auto& table = model.params()[model.layout().embedding];
      const std::size_t loaded = mtm::load_pretrained_embeddings(in, data.vocab, table);
      emit({{"event", "embeddings"}, {"loaded", loaded}, {"vocab", data.vocab.size()}});
    };
  }

  const auto start = std::chrono::steady_clock::now();
  const mtm::TrainResult result = mtm::train(
      data, config, [&](const mtm::EpochLog& log) { emit(epoch_json(log, seconds_since(start))); }, init);
  mtm::save_checkpoint(ckpt, config, data.vocab, result.model, result.best_epoch, result.best_valid);

  ordered_json best{{"event", "best"}, {"epoch", result.best_epoch}};
  if (result.best_valid) best["valid"] = mtm::metrics_to_json(*result.best_valid);
  if (!data.test.empty()) best["test"] = mtm::metrics_to_json(mtm::evaluate(result.model, data.test, config.ablation).overall);
  best["seconds"] = seconds_since(start);
  best["ckpt"] = ckpt;
  emit(best);
  return kOk;
}

int run_eval(const std::string& ckpt_path, const std::string& corpus_path, const std::string& which, bool by_type) {
  emit({{"command", "eval"}, {"ckpt", ckpt_path}, {"corpus", corpus_path}, {"split", which}, {"by_type", by_type}});
  const mtm::Checkpoint ckpt = mtm::load_checkpoint(ckpt_path);
  const mtm::Corpus corpus = read_corpus(corpus_path);
  const mtm::TrainConfig& config = ckpt.config;

  std::vector<mtm::NewsExample> news;
  if (which == "all") {
    mtm::Corpus filtered = corpus;
    mtm::filter_lengths(filtered);
    news = filtered.news;
  } else {
    const mtm::Splits s = recompute_splits(corpus, config);
    news = which == "train" ? s.train : which == "test" ? s.test : s.valid;
  }
  const auto instances = mtm::encode_news(news, ckpt.vocab, config.k, config.policy);
  const mtm::Evaluation e = mtm::evaluate(ckpt.model, instances, config.ablation, by_type);

  ordered_json j{{"event", "eval"}, {"split", which}, {"instances", instances.size()}, {"ablation", config.ablation.name()}};
  j["metrics"] = mtm::metrics_to_json(e.overall);
  emit(j);
  for (const auto& [type, m] : e.by_type) {
    emit({{"event", "eval_type"}, {"split", which}, {"type", type}, {"metrics", mtm::metrics_to_json(m)}});
  }
  return kOk;
}

// P(HIGH) is reported on a 0-10 scale. Sub-scores re-run the network with
// targets replaced by the absent encoding: info keeps only the comment
// itself, cons keeps title and abstract, nove keeps the surroundings.
int run_score(const std::string& ckpt_path, const std::string& corpus_path, const std::string& out) {
  emit({{"command", "score"}, {"ckpt", ckpt_path}, {"corpus", corpus_path}, {"out", out}});
  const mtm::Checkpoint ckpt = mtm::load_checkpoint(ckpt_path);
  mtm::Corpus corpus = read_corpus(corpus_path);
  mtm::filter_lengths(corpus);
  const mtm::TrainConfig& config = ckpt.config;

  const mtm::Ablation all{true, true, true};
  const mtm::Ablation no_surroundings{false, false, true};
  const mtm::Ablation no_targets{true, true, false};
  auto p_high = [&](const mtm::EncodedInstance& inst, const mtm::Ablation& a) {
    mtm::Tape<float> tape(ckpt.model.params(), false);
    return mtm::forward(tape, ckpt.model, inst, a).p_high();
  };

  std::size_t scored = 0;
  mtm::write_file_atomic(out, [&](std::ostream& os) {
    for (const auto& news : corpus.news) {
      for (const auto& inst : mtm::make_instances(news, config.k, config.policy)) {
        const mtm::EncodedInstance enc = mtm::encode_instance(inst, ckpt.vocab);
        const double p = p_high(enc, config.ablation);
        ordered_json j{{"news_id", enc.news_id},
                       {"comment_index", enc.comment_index},
                       {"type", enc.news_type},
                       {"label", mtm::label_name(enc.label)},
                       {"p_high", p},
                       {"score", 10.0 * p},
                       {"info", 10.0 * p_high(enc, all)},
                       {"cons", 10.0 * p_high(enc, no_surroundings)},
                       {"nove", 10.0 * p_high(enc, no_targets)}};
        os << j.dump() << '\n';
        ++scored;
      }
    }
  });
  emit({{"event", "score"}, {"comments", scored}, {"out", out}});
  return kOk;
}

int run_ablate(mtm::TrainConfig config, const std::string& corpus_path, const std::string& grid_spec,
               const std::string& out) {
  emit({{"command", "ablate"},
        {"corpus", corpus_path},
        {"grid", grid_spec},
        {"out", out},
        {"config", mtm::config_to_json(config)}});
  config.validate();
  const mtm::GridSpec grid = mtm::GridSpec::parse(grid_spec, config);
  for (const auto& cell : grid.cells) {
    mtm::TrainConfig c = config;
    c.k = cell.k;
    c.pool_size = cell.pool_size;
    c.validate();
  }
  const mtm::Corpus corpus = read_corpus(corpus_path);
  const auto start = std::chrono::steady_clock::now();
  const auto rows = mtm::ablation_sweep(corpus, config, grid, [&](const mtm::GridRow& row) {
    ordered_json j = mtm::grid_row_to_json(row);
    j["seconds"] = seconds_since(start);
    emit(j);
  });
  if (!out.empty()) {
    mtm::write_file_atomic(out, [&](std::ostream& os) {
      for (const auto& row : rows) os << mtm::grid_row_to_json(row).dump() << '\n';
    });
  }
  return kOk;
}

int run_gradcheck(std::uint64_t seed, double h) {
  emit({{"command", "gradcheck"}, {"seed", seed}, {"h", h}});
  if (!(h >= 1e-4 && h <= 1e-2)) throw std::invalid_argument("gradcheck: h must lie in [1e-4, 1e-2]");
  const auto start = std::chrono::steady_clock::now();
  const mtm::ToyCheckResult r = mtm::toy_grad_check(seed, h);
  const bool pass = r.report.max_rel_error < 1e-3;
  emit({{"event", "gradcheck"},
        {"max_rel_error", r.report.max_rel_error},
        {"worst_param", r.report.worst_param},
        {"worst_index", r.report.worst_index},
        {"worst_analytic", r.report.worst_analytic},
        {"worst_numeric", r.report.worst_numeric},
        {"coords", r.report.coords_checked},
        {"instances", r.instances},
        {"seconds", seconds_since(start)},
        {"pass", pass}});
  return pass ? kOk : kGradCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-target matching model for news comment quality"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  mtm::SynthOptions synth;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Write a deterministic synthetic corpus");
  synth_cmd->add_option("--seed", synth.seed)->capture_default_str();
  synth_cmd->add_option("--news", synth.news)->capture_default_str();
  synth_cmd->add_option("--comments-per-news", synth.comments_per_news)->capture_default_str();
  synth_cmd->add_option("--out", synth_out)->required();

  mtm::TrainConfig train_config;
  std::string train_policy = "nearest";
  std::string train_corpus, train_ckpt, train_embeddings;
  bool no_title = false, no_abstract = false, no_surroundings = false;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write the best checkpoint");
  train_cmd->add_option("--corpus", train_corpus)->required();
  train_cmd->add_option("--out-ckpt", train_ckpt)->required();
  add_model_flags(train_cmd, train_config, train_policy);
  train_cmd->add_flag("--no-title", no_title);
  train_cmd->add_flag("--no-abstract", no_abstract);
  train_cmd->add_flag("--no-surroundings", no_surroundings);
  train_cmd->add_option("--embeddings", train_embeddings, "Pretrained vectors (mtm-emb-v1 text format)");

  std::string eval_ckpt, eval_corpus, eval_split = "valid";
  bool by_type = false;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split of a corpus");
  eval_cmd->add_option("--ckpt", eval_ckpt)->required();
  eval_cmd->add_option("--corpus", eval_corpus)->required();
  eval_cmd->add_flag("--by-type", by_type);
  eval_cmd->add_option("--split", eval_split)->check(CLI::IsMember({"train", "valid", "test", "all"}))
      ->capture_default_str();

  std::string score_ckpt, score_corpus, score_out;
  auto* score_cmd = app.add_subcommand("score", "Score every comment of a corpus");
  score_cmd->add_option("--ckpt", score_ckpt)->required();
  score_cmd->add_option("--corpus", score_corpus)->required();
  score_cmd->add_option("--out", score_out)->required();

  mtm::TrainConfig ablate_config;
  std::string ablate_policy = "nearest";
  std::string ablate_corpus, grid = "paper", ablate_out;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train one model per grid cell and report metrics");
  ablate_cmd->add_option("--corpus", ablate_corpus)->required();
  ablate_cmd->add_option("--grid", grid, "paper, or e.g. 'ablations=full,noTitle;k=0,5;ps=4'")
      ->capture_default_str();
  ablate_cmd->add_option("--out", ablate_out, "Also write the rows to this file");
  add_model_flags(ablate_cmd, ablate_config, ablate_policy);

  std::uint64_t gc_seed = 1;
  double gc_h = 1e-4;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the full model on a toy batch");
  gc_cmd->set_help_flag("--help", "Print this help message and exit");
  gc_cmd->add_option("--seed", gc_seed)->capture_default_str();
  gc_cmd->add_option("--h", gc_h, "Finite-difference step in [1e-4, 1e-2]")->capture_default_str();

  auto fail = [](const Failure& f) {
    std::cerr << ordered_json{{"error", f.kind}, {"message", f.message}, {"exit_code", f.code}}.dump() << '\n';
    return f.code;
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail({kUsage, "usage", e.what()});
  }

  try {
    if (*synth_cmd) return run_synth(synth, synth_out);
    if (*train_cmd) {
      train_config.policy = mtm::parse_policy(train_policy);
      train_config.ablation = {no_title, no_abstract, no_surroundings};
      return run_train(train_config, train_corpus, train_ckpt, train_embeddings);
    }
    if (*eval_cmd) return run_eval(eval_ckpt, eval_corpus, eval_split, by_type);
    if (*score_cmd) return run_score(score_ckpt, score_corpus, score_out);
    if (*ablate_cmd) {
      ablate_config.policy = mtm::parse_policy(ablate_policy);
      return run_ablate(ablate_config, ablate_corpus, grid, ablate_out);
    }
    if (*gc_cmd) return run_gradcheck(gc_seed, gc_h);
  } catch (const mtm::CorpusError& e) {
    return fail({kCorpus, "corpus", e.what()});
  } catch (const mtm::EmbeddingFileError& e) {
    return fail({kCorpus, "embeddings", e.what()});
  } catch (const mtm::CheckpointError& e) {
    return fail({kCheckpoint, "checkpoint", e.what()});
  } catch (const mtm::TrainingDiverged& e) {
    return fail({kDiverged, "diverged", e.what()});
  } catch (const std::ios_base::failure& e) {
    return fail({kIo, "io", e.what()});
  } catch (const std::filesystem::filesystem_error& e) {
    return fail({kIo, "io", e.what()});
  } catch (const std::invalid_argument& e) {
    return fail({kConfig, "config", e.what()});
  } catch (const std::exception& e) {
    return fail({kInternal, "internal", e.what()});
  }
  return fail({kUsage, "usage", "no subcommand"});
}
