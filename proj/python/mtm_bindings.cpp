#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <optional>

#include "mtm/checkpoint.hpp"
#include "mtm/trainer.hpp"

namespace py = pybind11;
using nlohmann::ordered_json;

namespace {

// Structured values cross the boundary as JSON text; the Python layer parses it.

mtm::TrainConfig parse_config(const std::string& config_json) {
  mtm::TrainConfig c = mtm::config_from_json(nlohmann::json::parse(config_json));
  c.validate();
  return c;
}

mtm::Corpus read_corpus(const std::string& path) {
  std::ifstream probe(path);
  if (!probe) throw std::ios_base::failure("cannot open corpus: " + path);
  return mtm::load_corpus(path);
}

ordered_json optional_metrics(const std::optional<mtm::Metrics>& m) {
  return m ? mtm::metrics_to_json(*m) : ordered_json(nullptr);
}

std::string train(const std::string& corpus_path, const std::string& config_json, const std::string& ckpt_path) {
  const mtm::TrainConfig config = parse_config(config_json);
  const mtm::PreparedData data = mtm::prepare_data(read_corpus(corpus_path), config);
  std::optional<mtm::TrainResult> result;
  {
    py::gil_scoped_release release;
    result.emplace(mtm::train(data, config));
  }
  const mtm::TrainResult& r = *result;
  ordered_json out;
  out["vocab"] = data.vocab.size();
  out["train"] = data.train.size();
  out["valid"] = data.valid.size();
  out["test"] = data.test.size();
  out["epochs"] = ordered_json::array();
  for (const auto& e : r.log) {
    out["epochs"].push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"valid", optional_metrics(e.valid)}});
  }
  out["best_epoch"] = r.best_epoch;
  out["best_valid"] = optional_metrics(r.best_valid);
  out["test_metrics"] = data.test.empty() ? ordered_json(nullptr)
                                          : mtm::metrics_to_json(mtm::evaluate(r.model, data.test, config.ablation).overall);
  if (!ckpt_path.empty()) {
    mtm::save_checkpoint(ckpt_path, config, data.vocab, r.model, r.best_epoch, r.best_valid);
  }
  return out.dump();
}

std::string ablate(const std::string& corpus_path, const std::string& config_json, const std::string& grid) {
  const mtm::TrainConfig config = parse_config(config_json);
  const mtm::Corpus corpus = read_corpus(corpus_path);
  const mtm::GridSpec spec = mtm::GridSpec::parse(grid, config);
  std::vector<mtm::GridRow> rows;
  {
    py::gil_scoped_release release;
    rows = mtm::ablation_sweep(corpus, config, spec);
  }
  ordered_json out = ordered_json::array();
  for (const auto& row : rows) out.push_back(mtm::grid_row_to_json(row));
  return out.dump();
}

class LoadedModel {
 public:
  explicit LoadedModel(const std::string& path) : ckpt_(mtm::load_checkpoint(path)) {}

  std::string config() const { return mtm::config_to_json(ckpt_.config).dump(); }
  std::size_t vocab_size() const { return ckpt_.vocab.size(); }

  std::string evaluate(const std::string& corpus_path, const std::string& which) const {
    mtm::Corpus corpus = read_corpus(corpus_path);
    mtm::filter_lengths(corpus);
    std::vector<mtm::NewsExample> news;
    if (which == "all") {
      news = corpus.news;
    } else {
      const mtm::Splits s = mtm::split(corpus, ckpt_.config.fractions, ckpt_.config.seed);
      if (which == "train") news = s.train;
      else if (which == "valid") news = s.valid;
      else if (which == "test") news = s.test;
      else throw std::invalid_argument("split must be train, valid, test or all");
    }
    const auto instances = mtm::encode_news(news, ckpt_.vocab, ckpt_.config.k, ckpt_.config.policy);
    const mtm::Evaluation e = mtm::evaluate(ckpt_.model, instances, ckpt_.config.ablation, true);
    ordered_json out = mtm::metrics_to_json(e.overall);
    for (const auto& [type, m] : e.by_type) out["by_type"][type] = mtm::metrics_to_json(m);
    return out.dump();
  }

  // P(HIGH) for one comment, with the sub-scores used by `mtm score`.
  std::string score(const mtm::Tokens& title, const mtm::Tokens& abstract, const mtm::Tokens& comment,
                    const std::vector<mtm::Tokens>& surroundings) const {
    mtm::EncodedInstance inst;
    inst.title = ckpt_.vocab.encode(title);
    inst.abstract = ckpt_.vocab.encode(abstract);
    inst.comment = ckpt_.vocab.encode(comment);
    for (const auto& s : surroundings) inst.surroundings.push_back(ckpt_.vocab.encode(s));
    auto p = [&](const mtm::Ablation& a) {
      mtm::Tape<float> tape(ckpt_.model.params(), false);
      return mtm::forward(tape, ckpt_.model, inst, a).p_high();
    };
    const double p_high = p(ckpt_.config.ablation);
    return ordered_json{{"p_high", p_high},
                        {"score", 10.0 * p_high},
                        {"info", 10.0 * p({true, true, true})},
                        {"cons", 10.0 * p({false, false, true})},
                        {"nove", 10.0 * p({true, true, false})}}
        .dump();
  }

 private:
  mtm::Checkpoint ckpt_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-target matching comment-quality model";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const std::ios_base::failure& e) {
      PyErr_SetString(PyExc_OSError, e.what());
    }
  });
  py::register_exception<mtm::CorpusError>(m, "CorpusError", PyExc_ValueError);
  py::register_exception<mtm::CheckpointError>(m, "CheckpointError", PyExc_ValueError);

  m.def("label_for_likes", [](long long likes) { return std::string(mtm::label_name(mtm::label_for_likes(likes))); });
  m.def(
      "synth",
      [](std::uint64_t seed, std::size_t news, std::size_t comments) {
        return mtm::corpus_to_string(mtm::synth_generate({seed, news, comments}));
      },
      py::arg("seed") = 7, py::arg("news") = 200, py::arg("comments_per_news") = 10);
  m.def("default_config", [] { return mtm::config_to_json(mtm::TrainConfig{}).dump(); });
  m.def("train", &train, py::arg("corpus_path"), py::arg("config_json"), py::arg("ckpt_path") = "");
  m.def("ablate", &ablate, py::arg("corpus_path"), py::arg("config_json"), py::arg("grid") = "paper");
  m.def(
      "gradcheck",
      [](std::uint64_t seed, double h) {
        const mtm::ToyCheckResult r = mtm::toy_grad_check(seed, h);
        return ordered_json{{"max_rel_error", r.report.max_rel_error},
                            {"worst_param", r.report.worst_param},
                            {"coords_checked", r.report.coords_checked},
                            {"parameters", r.parameters},
                            {"instances", r.instances}}
            .dump();
      },
      py::arg("seed") = 1, py::arg("h") = 1e-4);
  m.def(
      "metrics",
      [](std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
        return mtm::metrics_to_json(mtm::compute_metrics({tp, fp, tn, fn})).dump();
      },
      py::arg("tp"), py::arg("fp"), py::arg("tn"), py::arg("fn"));

  py::class_<LoadedModel>(m, "Model")
      .def(py::init<const std::string&>(), py::arg("path"))
      .def_property_readonly("config_json", &LoadedModel::config)
      .def_property_readonly("vocab_size", &LoadedModel::vocab_size)
      .def("evaluate_json", &LoadedModel::evaluate, py::arg("corpus_path"), py::arg("split") = "valid")
      .def("score_json", &LoadedModel::score, py::arg("title"), py::arg("abstract"), py::arg("comment"),
           py::arg("surroundings"));
}
