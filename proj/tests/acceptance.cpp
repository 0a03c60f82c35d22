// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   mtm_acceptance [--only 1,4] [--cli path/to/mtm]

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mtm/matcher.hpp"
#include "mtm/model.hpp"
#include "mtm/trainer.hpp"
#include "oracle.hpp"
#include "support.hpp"

using namespace mtm;
using test::Matrix;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(4);
  os << x;
  return os.str();
}

// --- 1 ---------------------------------------------------------------------------

Outcome gradient_fidelity() {
  const auto start = Clock::now();
  const ToyCheckResult r = toy_grad_check(1, 1e-4);
  const double secs = seconds_since(start);
  const bool pass = r.instances == 3 && r.report.coords_checked == r.parameters &&
                    r.report.max_rel_error < 1e-3 && secs < 30.0;
  return {pass, "max_rel_error=" + fmt(r.report.max_rel_error) + " (" + r.report.worst_param + ") coords=" +
                    std::to_string(r.report.coords_checked) + " seconds=" + fmt(secs)};
}

// --- 2 ---------------------------------------------------------------------------

Outcome layer_oracle() {
  double worst = 0.0;
  const std::size_t seeds = 200;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    Rng rng(seed);
    const std::size_t h = test::pick(rng, 1, 8), p = test::pick(rng, 1, 5);
    const std::size_t lc = test::pick(rng, 1, 6), lt = test::pick(rng, 1, 6);
    ParamSet<double> params;
    const PerspectiveLayout layout = add_perspectives(params, "m", p, h, rng);
    auto text = [&](std::size_t len) {
      EncodedText<double> t;
      t.raw = {test::random_tensor(rng, len, h), test::random_tensor(rng, len, h)};
      t.pooled = t.raw;
      t.pool_size = 1;
      return t;
    };
    const EncodedText<double> comment = text(lc), target = text(lt);
    Tape<double> tape(params, false);
    const auto got = match_target(tape, comment, &target, layout);
    const Matrix expect = oracle::match(
        test::to_matrix(comment.pooled.forward), test::to_matrix(comment.pooled.backward),
        test::to_matrix(target.pooled.forward), test::to_matrix(target.pooled.backward),
        oracle::rows_of(params[layout.forward].value, p, h), oracle::rows_of(params[layout.backward].value, p, h));
    worst = std::max(worst, test::max_abs_diff(test::to_matrix(got), expect));
  }
  return {worst < 1e-5, "seeds=" + std::to_string(seeds) + " max_abs_diff=" + fmt(worst)};
}

// --- 3 ---------------------------------------------------------------------------

ModelConfig small_model(std::size_t vocab) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.embed_dim = 6;
  c.hidden = 5;
  c.agg_hidden = 4;
  c.perspectives = 2;
  c.pool_size = 2;
  c.classifier_hidden = 6;
  return c;
}

Outcome reductions() {
  bool pooling = true, cosine = true, surroundings = true;
  double cos_err = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const std::size_t len = test::pick(rng, 1, 8), h = test::pick(rng, 1, 8);
    const DirectionalStates<double> s{test::random_tensor(rng, len, h), test::random_tensor(rng, len, h)};
    const auto pooled = mean_pool(s, 1);
    pooling &= pooled.forward.to_vector() == s.forward.to_vector() &&
               pooled.backward.to_vector() == s.backward.to_vector();

    const auto v1 = test::random_tensor(rng, len, h), v2 = test::random_tensor(rng, len, h);
    const auto m = multi_perspective(v1, v2, Tensor<double>({1, h}, std::vector<double>(h, 1.0)));
    const Matrix a = test::to_matrix(v1), b = test::to_matrix(v2);
    for (std::size_t i = 0; i < len; ++i) cos_err = std::max(cos_err, std::abs(m.at(i, 0) - test::cosine_direct(a[i], b[i])));
  }
  cosine = cos_err < 1e-12;

  // Forward pass, instance by instance.
  const Model<float> model(small_model(20), 4);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    auto text = [&] {
      std::vector<TokenId> ids(test::pick(rng, 2, 8));
      for (auto& id : ids) id = static_cast<TokenId>(test::pick(rng, 1, 19));
      return ids;
    };
    EncodedInstance with;
    with.comment = text();
    with.title = text();
    with.abstract = text();
    for (std::size_t k = test::pick(rng, 1, 5); k > 0; --k) with.surroundings.push_back(text());
    EncodedInstance without = with;
    without.surroundings.clear();
    Tape<float> tape(model.params(), false);
    surroundings &= forward(tape, model, without, Ablation{}).probabilities.to_vector() ==
                    forward(tape, model, with, Ablation{false, false, true}).probabilities.to_vector();
  }

  // Whole training runs: K=0 against noSurroundings at K=5.
  TrainConfig base;
  base.embed_dim = 8;
  base.hidden = 6;
  base.agg_hidden = 5;
  base.classifier_hidden = 6;
  base.perspectives = 2;
  base.epochs = 2;
  const Corpus corpus = synth_generate({3, 20, 8});
  TrainConfig k0 = base;
  k0.k = 0;
  TrainConfig ns = base;
  ns.ablation.no_surroundings = true;
  const TrainResult a = train(prepare_data(corpus, k0), k0);
  const TrainResult b = train(prepare_data(corpus, ns), ns);
  bool trained_same = a.best_epoch == b.best_epoch && a.log.size() == b.log.size();
  for (std::size_t e = 0; trained_same && e < a.log.size(); ++e) {
    trained_same = a.log[e].train_loss == b.log[e].train_loss &&
                   a.log[e].valid->confusion == b.log[e].valid->confusion;
  }
  for (ParamId id = 0; trained_same && id < a.model.params().size(); ++id) {
    trained_same = a.model.params()[id].value == b.model.params()[id].value;
  }
  surroundings &= trained_same;

  auto flag = [](bool b) { return b ? "ok" : "FAILED"; };
  return {pooling && cosine && surroundings, std::string("ps=1 identity ") + flag(pooling) +
                                                 "; p=1 unit weights vs cosine max_diff=" + fmt(cos_err) +
                                                 "; K=0 vs noSurroundings " + flag(surroundings)};
}

// --- 4 ---------------------------------------------------------------------------

Outcome learnability() {
  const auto start = Clock::now();
  TrainConfig config;  // lr 0.001, dropout 0.2, H=100, d=200, K=5, ps=4
  config.epochs = 10;
  const PreparedData data = prepare_data(synth_generate({7, 200, 10}), config);

  std::size_t high = 0;
  for (const auto& inst : data.valid) high += inst.label == Label::high;
  const double majority =
      static_cast<double>(std::max(high, data.valid.size() - high)) / static_cast<double>(data.valid.size());

  const TrainResult r = train(data, config);
  const Metrics v = evaluate(r.model, data.valid, config.ablation).overall;
  const double secs = seconds_since(start);
  const bool pass = v.accuracy >= 0.90 && v.f1 >= 0.90 && r.best_epoch <= 10 && secs < 600.0 && majority <= 0.60;
  return {pass, "valid accuracy=" + fmt(v.accuracy) + " f1=" + fmt(v.f1) + " best_epoch=" +
                    std::to_string(r.best_epoch) + " majority_baseline=" + fmt(majority) + " seconds=" + fmt(secs)};
}

// --- 5 ---------------------------------------------------------------------------

Outcome ablation_direction() {
  // Reduced widths keep 5 seeds x 4 variants affordable on one core.
  TrainConfig config;
  config.embed_dim = 64;
  config.hidden = 32;
  config.agg_hidden = 32;
  config.classifier_hidden = 32;
  config.epochs = 8;
  const Corpus corpus = synth_generate({7, 200, 10});
  std::map<std::string, double> mean;
  const std::vector<std::string> names = {"full", "noTitle", "noAbstract", "noSurroundings"};
  const std::size_t seeds = 5;
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    config.seed = seed;
    const auto rows = ablation_sweep(corpus, config, GridSpec::parse("ablations=full,noTitle,noAbstract,noSurroundings", config));
    for (const auto& row : rows) mean[row.cell.ablation.name()] += row.valid.f1 / static_cast<double>(seeds);
  }
  bool pass = true;
  std::string detail = "mean valid F1";
  for (const auto& name : names) {
    detail += " " + name + "=" + fmt(mean[name]);
    if (name != "full") pass &= mean[name] < mean["full"];
  }
  return {pass, detail};
}

// --- 6 ---------------------------------------------------------------------------

TrainConfig tiny_grid_config() {
  TrainConfig c;
  c.embed_dim = 8;
  c.hidden = 6;
  c.agg_hidden = 5;
  c.classifier_hidden = 6;
  c.perspectives = 2;
  c.epochs = 1;
  return c;
}

std::string run_command(const std::string& command) {
  std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(command.c_str(), "r"), pclose);
  if (!pipe) throw std::runtime_error("cannot run " + command);
  std::string out;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe.get())) out.append(buf, n);
  return out;
}

// Grid rows of the CLI output with the wall-clock field removed.
std::vector<std::string> cli_rows(const std::string& out) {
  std::vector<std::string> rows;
  std::istringstream in(out);
  for (std::string line; std::getline(in, line);) {
    auto j = nlohmann::ordered_json::parse(line);
    if (!j.contains("table")) continue;
    j.erase("seconds");
    rows.push_back(j.dump());
  }
  return rows;
}

Outcome grid_reproduction(const std::string& cli) {
  const Corpus corpus = synth_generate({11, 24, 6});
  const TrainConfig config = tiny_grid_config();
  const GridSpec grid = GridSpec::parse("paper", config);
  auto dump = [](const std::vector<GridRow>& rows) {
    std::vector<std::string> out;
    for (const auto& r : rows) out.push_back(grid_row_to_json(r).dump());
    return out;
  };
  const auto first = ablation_sweep(corpus, config, grid);
  const bool repeatable = dump(first) == dump(ablation_sweep(corpus, config, grid));

  std::multiset<std::string> tables;
  std::vector<std::size_t> ks, pss;
  std::vector<std::string> ablations;
  for (const auto& row : first) {
    tables.insert(row.cell.table);
    if (row.cell.table == "ablation") {
      ablations.push_back(row.cell.ablation.name());
      if (row.cell.k != 5 || row.cell.pool_size != 4) return {false, "ablation table not at K=5, ps=4"};
    }
    if (row.cell.table == "surroundings") {
      ks.push_back(row.cell.k);
      if (row.cell.pool_size != 4 || !(row.cell.ablation == Ablation{})) return {false, "surroundings table cell"};
    }
    if (row.cell.table == "pooling") {
      pss.push_back(row.cell.pool_size);
      if (row.cell.k != 5 || !(row.cell.ablation == Ablation{})) return {false, "pooling table cell"};
    }
  }
  const bool shape = first.size() == 12 && tables.count("ablation") == 4 && tables.count("surroundings") == 4 &&
                     tables.count("pooling") == 4 && ks == std::vector<std::size_t>{0, 1, 3, 5} &&
                     pss == std::vector<std::size_t>{1, 2, 3, 4} &&
                     ablations == std::vector<std::string>{"full", "noTitle", "noAbstract", "noSurroundings"};
  std::string detail = "rows=" + std::to_string(first.size()) + " K=" + std::to_string(ks.size()) + " ps=" +
                       std::to_string(pss.size()) + (repeatable ? " repeatable" : " NOT repeatable");

  bool cli_ok = true;
  if (!cli.empty()) {
    const std::string corpus_path = (std::filesystem::temp_directory_path() / "mtm_acceptance_grid.jsonl").string();
    {
      std::ofstream out(corpus_path);
      write_corpus(corpus, out);
    }
    const std::string command = cli + " ablate --grid paper --corpus " + corpus_path +
                                " --embed-dim 8 --hidden 6 --agg-hidden 5 --classifier-hidden 6 --p 2 --epochs 1";
    const auto a = cli_rows(run_command(command));
    const auto b = cli_rows(run_command(command));
    cli_ok = a.size() == 12 && a == b;
    detail += "; cli rows=" + std::to_string(a.size()) + (a == b ? " repeatable" : " NOT repeatable");
    std::filesystem::remove(corpus_path);
  }
  return {shape && repeatable && cli_ok, detail};
}

// --- 7 ---------------------------------------------------------------------------

Outcome metrics_oracle() {
  // tp=3, fp=1, fn=2, tn=4 as prediction lists.
  std::vector<Label> truth, pred;
  auto add = [&](std::size_t n, Label t, Label p) {
    truth.insert(truth.end(), n, t);
    pred.insert(pred.end(), n, p);
  };
  add(3, Label::high, Label::high);
  add(1, Label::low, Label::high);
  add(2, Label::high, Label::low);
  add(4, Label::low, Label::low);
  const Metrics m = metrics_from_predictions(truth, pred);
  const bool pass = m.confusion == Confusion{3, 1, 4, 2} && m.precision == 0.75 && m.recall == 0.6 &&
                    m.accuracy == 0.7 && m.f1 == 2.0 * 0.75 * 0.6 / (0.75 + 0.6);
  return {pass, "P=" + fmt(m.precision) + " R=" + fmt(m.recall) + " Acc=" + fmt(m.accuracy) + " F1=" + fmt(m.f1)};
}

// --- 8 ---------------------------------------------------------------------------

Tokens words(std::size_t n) {
  Tokens t;
  for (std::size_t i = 0; i < n; ++i) t.push_back("w" + std::to_string(i));
  return t;
}

Outcome data_rules() {
  const bool labels = label_for_likes(247) == Label::high && label_for_likes(0) == Label::low &&
                      label_for_likes(10) == Label::low && label_for_likes(11) == Label::high;

  // The same rules through the corpus reader: labels are recomputed from likes.
  std::ostringstream jsonl;
  jsonl << R"({"schema":"mtm-corpus-v1","types":["world"]})" << '\n';
  nlohmann::json news = {{"title", words(5)}, {"abstract", words(5)}, {"type", "world"}};
  for (auto [len, likes] : {std::pair{4, 247}, {5, 247}, {5, 0}, {200, 11}, {201, 10}}) {
    news["comments"].push_back({{"text", words(len)}, {"likes", likes}, {"replies", 0}});
  }
  jsonl << news.dump() << '\n';
  news["title"] = words(4);
  jsonl << news.dump() << '\n';
  std::istringstream in(jsonl.str());
  Corpus corpus = parse_corpus(in);
  const FilterReport report = filter_lengths(corpus);
  bool filtered = corpus.news.size() == 1 && report.dropped_news == 1 && report.dropped_comments == 2 + 5;
  if (filtered) {
    const auto& c = corpus.news[0].comments;
    filtered = c.size() == 3 && c[0].text.size() == 5 && c[0].label == Label::high && c[1].label == Label::low &&
               c[2].text.size() == 200 && c[2].label == Label::high;
  }
  return {labels && filtered, std::string("likes 247/0/10/11 -> ") + (labels ? "HIGH/LOW/LOW/HIGH" : "wrong") +
                                  "; length bounds [5, 200] " + (filtered ? "ok" : "wrong")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  std::string cli;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      std::istringstream list(argv[++i]);
      for (std::string item; std::getline(list, item, ',');) only.insert(std::stoi(item));
    } else if (arg == "--cli" && i + 1 < argc) {
      cli = argv[++i];
    } else {
      std::cerr << "usage: mtm_acceptance [--only 1,2,...] [--cli path]\n";
      return 2;
    }
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient fidelity", gradient_fidelity},
      {"layer oracle equivalence", layer_oracle},
      {"reduction identities", reductions},
      {"synthetic learnability", learnability},
      {"ablation direction", ablation_direction},
      {"grid reproduction", [&] { return grid_reproduction(cli); }},
      {"metrics oracle", metrics_oracle},
      {"data rules", data_rules},
  };

  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(number)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all &= o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << number << "] " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return all ? 0 : 1;
}
