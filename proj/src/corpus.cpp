#include "mtm/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace mtm {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

Label label_for_likes(long long likes) {
  return likes > kHighLikesThreshold ? Label::high : Label::low;
}

const char* label_name(Label label) {
  return label == Label::high ? "HIGH" : "LOW";
}

std::size_t Corpus::comment_count() const {
  std::size_t n = 0;
  for (const auto& item : news) n += item.comments.size();
  return n;
}

CorpusError::CorpusError(std::size_t line, const std::string& message)
    : std::runtime_error(line ? "line " + std::to_string(line) + ": " + message : message), line(line) {}

// --- reading and writing ------------------------------------------------------

namespace {

const json& require(const json& obj, const char* field, std::size_t line) {
  auto it = obj.find(field);
  if (it == obj.end()) throw CorpusError(line, std::string("missing required field \"") + field + "\"");
  return *it;
}

Tokens read_tokens(const json& value, const char* field, std::size_t line) {
  if (!value.is_array()) throw CorpusError(line, std::string("field \"") + field + "\" must be a token array");
  Tokens out;
  out.reserve(value.size());
  for (const auto& tok : value) {
    if (!tok.is_string()) throw CorpusError(line, std::string("field \"") + field + "\" holds a non-string token");
    out.push_back(tok.get<std::string>());
  }
  return out;
}

long long read_count(const json& value, const char* field, std::size_t line) {
  if (!value.is_number_integer()) throw CorpusError(line, std::string("field \"") + field + "\" must be an integer");
  const long long n = value.get<long long>();
  if (n < 0) throw CorpusError(line, std::string("negative ") + field + ": " + std::to_string(n));
  return n;
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

Corpus parse_corpus(std::istream& in) {
  Corpus corpus;
  std::string text;
  std::size_t line = 0;
  bool have_header = false;
  std::set<std::string> declared;
  while (std::getline(in, text)) {
    ++line;
    if (blank(text)) continue;
    json record;
    try {
      record = json::parse(text);
    } catch (const json::parse_error& e) {
      throw CorpusError(line, std::string("malformed JSON: ") + e.what());
    }
    if (!record.is_object()) throw CorpusError(line, "record is not a JSON object");

    if (!have_header) {
      auto schema = record.find("schema");
      if (schema == record.end()) throw CorpusError(line, "missing header line {\"schema\": ...}");
      if (!schema->is_string() || schema->get<std::string>() != kCorpusSchema) {
        throw CorpusError(line, "unknown schema version: " + schema->dump());
      }
      const json& types = require(record, "types", line);
      corpus.types = read_tokens(types, "types", line);
      declared.insert(corpus.types.begin(), corpus.types.end());
      have_header = true;
      continue;
    }

    NewsExample news;
    news.id = corpus.news.size();
    news.title = read_tokens(require(record, "title", line), "title", line);
    news.abstract = read_tokens(require(record, "abstract", line), "abstract", line);
    if (auto body = record.find("body"); body != record.end()) news.body = read_tokens(*body, "body", line);
    const json& type = require(record, "type", line);
    if (!type.is_string()) throw CorpusError(line, "field \"type\" must be a string");
    news.type = type.get<std::string>();
    if (!declared.contains(news.type)) {
      throw CorpusError(line, "news type \"" + news.type + "\" not declared in header");
    }
    const json& comments = require(record, "comments", line);
    if (!comments.is_array()) throw CorpusError(line, "field \"comments\" must be an array");
    for (const auto& c : comments) {
      if (!c.is_object()) throw CorpusError(line, "comment is not a JSON object");
      CommentRecord comment;
      comment.text = read_tokens(require(c, "text", line), "text", line);
      comment.likes = read_count(require(c, "likes", line), "likes", line);
      comment.replies = read_count(require(c, "replies", line), "replies", line);
      comment.label = label_for_likes(comment.likes);
      news.comments.push_back(std::move(comment));
    }
    corpus.news.push_back(std::move(news));
  }
  if (!have_header) throw CorpusError(0, "empty corpus: header line missing");
  return corpus;
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open corpus file: " + path);
  return parse_corpus(in);
}

void write_corpus(const Corpus& corpus, std::ostream& out) {
  ordered_json header;
  header["schema"] = kCorpusSchema;
  header["types"] = corpus.types;
  out << header.dump() << '\n';
  for (const auto& news : corpus.news) {
    ordered_json record;
    record["title"] = news.title;
    record["abstract"] = news.abstract;
    record["body"] = news.body;
    record["type"] = news.type;
    record["comments"] = ordered_json::array();
    for (const auto& c : news.comments) {
      ordered_json comment;
      comment["text"] = c.text;
      comment["likes"] = c.likes;
      comment["replies"] = c.replies;
      record["comments"].push_back(std::move(comment));
    }
    out << record.dump() << '\n';
  }
}

std::string corpus_to_string(const Corpus& corpus) {
  std::ostringstream os;
  write_corpus(corpus, os);
  return os.str();
}

void relabel(Corpus& corpus) {
  for (auto& news : corpus.news)
    for (auto& c : news.comments) c.label = label_for_likes(c.likes);
}

FilterReport filter_lengths(Corpus& corpus) {
  auto in_bounds = [](const Tokens& t) { return t.size() >= kMinTextLength && t.size() <= kMaxTextLength; };
  FilterReport report;
  std::vector<NewsExample> kept;
  kept.reserve(corpus.news.size());
  for (auto& news : corpus.news) {
    if (!in_bounds(news.title) || !in_bounds(news.abstract)) {
      ++report.dropped_news;
      report.dropped_comments += news.comments.size();
      continue;
    }
    const auto before = news.comments.size();
    std::erase_if(news.comments, [&](const CommentRecord& c) { return !in_bounds(c.text); });
    report.dropped_comments += before - news.comments.size();
    kept.push_back(std::move(news));
  }
  corpus.news = std::move(kept);
  return report;
}

// --- vocabulary ---------------------------------------------------------------

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  tokens_ = {"<pad>", "<unk>", "<sep>"};
  for (TokenId i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
  for (const auto& tok : tokens) {
    if (index_.contains(tok)) throw std::invalid_argument("duplicate vocabulary entry: " + tok);
    index_.emplace(tok, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(tok);
  }
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) throw std::out_of_range("token id out of range: " + std::to_string(id));
  return tokens_[id];
}

std::vector<TokenId> Vocabulary::encode(const Tokens& tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

Tokens Vocabulary::decode(std::span<const TokenId> ids) const {
  Tokens out;
  out.reserve(ids.size());
  for (TokenId i : ids) out.push_back(token(i));
  return out;
}

std::vector<std::string> Vocabulary::entries() const {
  return {tokens_.begin() + kReserved, tokens_.end()};
}

Vocabulary build_vocab(const std::vector<NewsExample>& news, std::size_t min_count) {
  if (news.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::unordered_map<std::string, std::size_t> counts;
  auto count = [&](const Tokens& tokens) {
    for (const auto& t : tokens) ++counts[t];
  };
  for (const auto& item : news) {
    count(item.title);
    count(item.abstract);
    for (const auto& c : item.comments) count(c.text);
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [token, n] : counts) {
    if (n >= std::max<std::size_t>(min_count, 1)) ranked.emplace_back(token, n);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> tokens;
  tokens.reserve(ranked.size());
  for (auto& [token, n] : ranked) {
    // Reserved spellings never come from data.
    if (token == "<pad>" || token == "<unk>" || token == "<sep>") continue;
    tokens.push_back(std::move(token));
  }
  return Vocabulary(tokens);
}

// --- instances ----------------------------------------------------------------

SelectionPolicy parse_policy(const std::string& name) {
  if (name == "nearest") return SelectionPolicy::nearest;
  if (name == "top-liked" || name == "top_liked") return SelectionPolicy::top_liked;
  throw std::invalid_argument("unknown surrounding-selection policy: " + name);
}

const char* policy_name(SelectionPolicy policy) {
  return policy == SelectionPolicy::nearest ? "nearest" : "top-liked";
}

std::vector<std::size_t> select_surroundings(const std::vector<CommentRecord>& comments,
                                             std::size_t target, std::size_t k,
                                             SelectionPolicy policy) {
  std::vector<std::size_t> candidates;
  for (std::size_t j = 0; j < comments.size(); ++j) {
    if (j != target) candidates.push_back(j);
  }
  auto distance = [target](std::size_t j) { return j < target ? target - j : j - target; };
  if (policy == SelectionPolicy::nearest) {
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](std::size_t a, std::size_t b) { return distance(a) < distance(b); });
  } else {
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](std::size_t a, std::size_t b) { return comments[a].likes > comments[b].likes; });
  }
  if (candidates.size() > k) candidates.resize(k);
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

std::vector<TrainingInstance> make_instances(const NewsExample& news, std::size_t k,
                                             SelectionPolicy policy) {
  std::vector<TrainingInstance> out;
  out.reserve(news.comments.size());
  for (std::size_t i = 0; i < news.comments.size(); ++i) {
    TrainingInstance inst;
    inst.news_id = news.id;
    inst.comment_index = i;
    inst.news_type = news.type;
    inst.comment = news.comments[i];
    inst.title = news.title;
    inst.abstract = news.abstract;
    for (std::size_t j : select_surroundings(news.comments, i, k, policy)) {
      inst.surroundings.push_back(news.comments[j].text);
    }
    inst.label = news.comments[i].label;
    out.push_back(std::move(inst));
  }
  return out;
}

EncodedInstance encode_instance(const TrainingInstance& instance, const Vocabulary& vocab) {
  EncodedInstance out;
  out.news_id = instance.news_id;
  out.comment_index = instance.comment_index;
  out.news_type = instance.news_type;
  out.comment = vocab.encode(instance.comment.text);
  out.title = vocab.encode(instance.title);
  out.abstract = vocab.encode(instance.abstract);
  for (const auto& s : instance.surroundings) out.surroundings.push_back(vocab.encode(s));
  out.label = instance.label;
  return out;
}

// --- splits -------------------------------------------------------------------

Splits split(const Corpus& corpus, const SplitFractions& fractions, std::uint64_t seed) {
  const std::array<double, 3> f{fractions.train, fractions.valid, fractions.test};
  for (double x : f) {
    if (!(x >= 0.0 && x <= 1.0)) throw std::invalid_argument("split fractions must lie in [0, 1]");
  }
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw std::invalid_argument("split fractions must sum to 1");

  const std::size_t n = corpus.news.size();
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> remainders{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = f[i] * static_cast<double>(n);
    // Absorb representation error such as 0.8 * 10 = 8.000000000000002.
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainders[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
  for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++counts[order[r % 3]];

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);

  Splits out;
  std::array<std::vector<NewsExample>*, 3> dest{&out.train, &out.valid, &out.test};
  std::size_t pos = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    std::vector<std::size_t> mine(idx.begin() + pos, idx.begin() + pos + counts[s]);
    pos += counts[s];
    std::sort(mine.begin(), mine.end());
    for (std::size_t i : mine) dest[s]->push_back(corpus.news[i]);
  }
  return out;
}

// --- synthetic corpus -----------------------------------------------------------

namespace {

const std::vector<std::string> kNewsTypes = {"health",  "technology", "world",        "finance",
                                             "sports",  "society",    "entertainment"};

const std::vector<std::string> kGenericWords = {
    "lol",   "haha",  "first", "agree",  "nice",  "ok",     "wow",  "yes",   "no",     "same",
    "thanks", "cool", "meh",   "true",   "really", "what",  "good", "bad",   "sad",    "funny",
    "whatever", "hmm", "omg",  "right",  "sure",  "nope",   "yawn", "boring", "great", "fine"};

constexpr std::size_t kContentPool = 600;
constexpr std::size_t kNovelPool = 400;
constexpr std::size_t kQuoteSpan = 4;

std::string content_word(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "c%04zu", i);
  return buf;
}

std::string novel_word(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "n%04zu", i);
  return buf;
}

enum class CommentKind { high, generic, foreign_title, foreign_abstract, duplicate };

class SynthBuilder {
 public:
  explicit SynthBuilder(std::uint64_t seed) : rng_(seed) {}

  std::size_t uniform(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }

  Tokens distinct_content(std::size_t n) {
    std::vector<std::size_t> picks;
    std::set<std::size_t> seen;
    while (picks.size() < n) {
      const std::size_t w = uniform(0, kContentPool - 1);
      if (seen.insert(w).second) picks.push_back(w);
    }
    Tokens out;
    for (std::size_t w : picks) out.push_back(content_word(w));
    return out;
  }

  Tokens span(const Tokens& source, std::size_t length) {
    const std::size_t start = uniform(0, source.size() - length);
    return {source.begin() + start, source.begin() + start + length};
  }

  // Words from the novel pool not yet used anywhere in the current item.
  Tokens fresh_words(std::size_t n, std::set<std::string>& used) {
    Tokens out;
    while (out.size() < n) {
      std::string w = novel_word(uniform(0, kNovelPool - 1));
      if (used.insert(w).second) out.push_back(std::move(w));
    }
    return out;
  }

  // [title span] [novel] [abstract span] [novel]
  Tokens quoting_comment(const Tokens& title, const Tokens& abstract, std::set<std::string>& used) {
    Tokens out = span(title, kQuoteSpan);
    const std::size_t novel = uniform(3, 5);
    const std::size_t first = uniform(1, novel - 1);
    Tokens words = fresh_words(novel, used);
    out.insert(out.end(), words.begin(), words.begin() + first);
    Tokens a = span(abstract, kQuoteSpan);
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), words.begin() + first, words.end());
    return out;
  }

  Tokens generic_comment() {
    Tokens out;
    const std::size_t n = uniform(5, 6);
    for (std::size_t i = 0; i < n; ++i) out.push_back(kGenericWords[uniform(0, kGenericWords.size() - 1)]);
    return out;
  }

  CommentRecord record(Tokens text, bool high) {
    CommentRecord c;
    c.text = std::move(text);
    c.likes = high ? static_cast<long long>(11 + uniform(0, 40) * uniform(1, 8)) : static_cast<long long>(uniform(0, 10));
    c.replies = static_cast<long long>(uniform(0, static_cast<std::size_t>(c.likes) / 10 + 1));
    c.label = label_for_likes(c.likes);
    return c;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace

Corpus synth_generate(const SynthOptions& options) {
  SynthBuilder b(options.seed);
  Corpus corpus;
  corpus.types = kNewsTypes;

  struct Draft {
    Tokens title;
    Tokens abstract;
  };
  std::vector<Draft> drafts;
  for (std::size_t i = 0; i < options.news; ++i) {
    Tokens words = b.distinct_content(b.uniform(6, 8) + b.uniform(12, 16));
    const std::size_t title_len = b.uniform(6, 8);
    const std::size_t abstract_len = std::min<std::size_t>(words.size() - title_len, b.uniform(12, 16));
    drafts.push_back({Tokens(words.begin(), words.begin() + title_len),
                      Tokens(words.begin() + title_len, words.begin() + title_len + abstract_len)});
  }

  for (std::size_t i = 0; i < options.news; ++i) {
    NewsExample news;
    news.id = i;
    news.title = drafts[i].title;
    news.abstract = drafts[i].abstract;
    news.body = news.abstract;
    Tokens extra = b.distinct_content(20);
    news.body.insert(news.body.end(), extra.begin(), extra.end());
    news.type = kNewsTypes[b.uniform(0, kNewsTypes.size() - 1)];

    const std::size_t n = options.comments_per_news;
    // 45% LOW on average: floor or ceil of 0.45 n.
    const double low_exact = 0.45 * static_cast<double>(n);
    std::size_t n_low = static_cast<std::size_t>(std::floor(low_exact));
    if (std::uniform_real_distribution<double>(0.0, 1.0)(b.rng()) < low_exact - std::floor(low_exact)) ++n_low;

    std::vector<CommentKind> kinds;
    if (n_low >= 2 && n >= 4) {
      kinds = {CommentKind::duplicate, CommentKind::duplicate};
    }
    const std::array<CommentKind, 3> cycle{CommentKind::generic, CommentKind::foreign_title,
                                           CommentKind::foreign_abstract};
    const std::size_t offset = b.uniform(0, 2);
    for (std::size_t k = 0; kinds.size() < n_low; ++k) kinds.push_back(cycle[(offset + k) % 3]);
    while (kinds.size() < n) kinds.push_back(CommentKind::high);

    auto other = [&] {
      if (options.news < 2) return i;
      std::size_t j = b.uniform(0, options.news - 2);
      return j >= i ? j + 1 : j;
    };

    std::set<std::string> used;
    std::vector<CommentRecord> singles;
    std::vector<CommentRecord> pair;
    for (CommentKind kind : kinds) {
      switch (kind) {
        case CommentKind::high:
          singles.push_back(b.record(b.quoting_comment(news.title, news.abstract, used), true));
          break;
        case CommentKind::generic:
          singles.push_back(b.record(b.generic_comment(), false));
          break;
        case CommentKind::foreign_title:
          singles.push_back(b.record(b.quoting_comment(drafts[other()].title, news.abstract, used), false));
          break;
        case CommentKind::foreign_abstract:
          singles.push_back(b.record(b.quoting_comment(news.title, drafts[other()].abstract, used), false));
          break;
        case CommentKind::duplicate:
          if (pair.empty()) {
            Tokens text = b.quoting_comment(news.title, news.abstract, used);
            pair.push_back(b.record(text, false));
            // Near-duplicate: one word swapped.
            Tokens copy = text;
            copy[copy.size() - 1] = b.fresh_words(1, used).front();
            pair.push_back(b.record(std::move(copy), false));
          }
          break;
      }
    }
    std::shuffle(singles.begin(), singles.end(), b.rng());
    const std::size_t at = b.uniform(0, singles.size());
    singles.insert(singles.begin() + static_cast<std::ptrdiff_t>(at), pair.begin(), pair.end());
    news.comments = std::move(singles);
    corpus.news.push_back(std::move(news));
  }
  return corpus;
}

}  // namespace mtm
