#pragma once

// News/comment corpora: the line-delimited JSON format, labeling and length
// rules, vocabulary, training-instance assembly, splits, and a synthetic
// generator with the same schema.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace mtm {

using Tokens = std::vector<std::string>;
using TokenId = std::uint32_t;

inline constexpr const char* kCorpusSchema = "mtm-corpus-v1";
inline constexpr int kHighLikesThreshold = 10;  // HIGH iff likes > 10
inline constexpr std::size_t kMinTextLength = 5;
inline constexpr std::size_t kMaxTextLength = 200;

enum class Label : int { low = 0, high = 1 };

Label label_for_likes(long long likes);
const char* label_name(Label label);

struct CommentRecord {
  Tokens text;
  long long likes = 0;
  long long replies = 0;
  Label label = Label::low;
};

struct NewsExample {
  std::size_t id = 0;  // position in the source file
  Tokens title;
  Tokens abstract;
  Tokens body;  // retained, never fed to the model
  std::string type;
  std::vector<CommentRecord> comments;
};

struct Corpus {
  std::vector<std::string> types;
  std::vector<NewsExample> news;

  std::size_t comment_count() const;
};

class CorpusError : public std::runtime_error {
 public:
  CorpusError(std::size_t line, const std::string& message);
  std::size_t line;  // 1-based; 0 when not tied to a line
};

Corpus parse_corpus(std::istream& in);
Corpus load_corpus(const std::string& path);
void write_corpus(const Corpus& corpus, std::ostream& out);
std::string corpus_to_string(const Corpus& corpus);

// Recomputes every comment label from its like count.
void relabel(Corpus& corpus);

struct FilterReport {
  std::size_t dropped_news = 0;
  std::size_t dropped_comments = 0;  // includes the comments of dropped news
};

// Drops comments whose length lies outside [5, 200], and whole news items
// whose title or abstract does.
FilterReport filter_lengths(Corpus& corpus);

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kSep = 2;
  static constexpr std::size_t kReserved = 3;

  Vocabulary();
  // Tokens in the given order, appended after the reserved entries.
  explicit Vocabulary(const std::vector<std::string>& tokens);

  std::size_t size() const { return tokens_.size(); }
  TokenId id(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.contains(token); }
  const std::string& token(TokenId id) const;
  std::vector<TokenId> encode(const Tokens& tokens) const;
  Tokens decode(std::span<const TokenId> ids) const;
  // Non-reserved tokens in id order.
  std::vector<std::string> entries() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Frequency-descending ids (ties lexicographic) for every title, abstract and
// comment token seen at least min_count times. Bodies are not counted.
Vocabulary build_vocab(const std::vector<NewsExample>& news, std::size_t min_count);

enum class SelectionPolicy { nearest, top_liked };
SelectionPolicy parse_policy(const std::string& name);
const char* policy_name(SelectionPolicy policy);

struct TrainingInstance {
  std::size_t news_id = 0;
  std::size_t comment_index = 0;
  std::string news_type;
  CommentRecord comment;
  Tokens title;
  Tokens abstract;
  std::vector<Tokens> surroundings;  // in comment-list order
  Label label = Label::low;
};

// Indices of the comments used as context for comments[target]. nearest: the
// k closest by list position, earlier first on ties. top_liked: the k most
// liked, earlier first on ties. Returned in list order, never containing
// target.
std::vector<std::size_t> select_surroundings(const std::vector<CommentRecord>& comments,
                                             std::size_t target, std::size_t k,
                                             SelectionPolicy policy);

std::vector<TrainingInstance> make_instances(const NewsExample& news, std::size_t k,
                                             SelectionPolicy policy = SelectionPolicy::nearest);

struct EncodedInstance {
  std::size_t news_id = 0;
  std::size_t comment_index = 0;
  std::string news_type;
  std::vector<TokenId> comment;
  std::vector<TokenId> title;
  std::vector<TokenId> abstract;
  std::vector<std::vector<TokenId>> surroundings;
  Label label = Label::low;
};

EncodedInstance encode_instance(const TrainingInstance& instance, const Vocabulary& vocab);

struct Splits {
  std::vector<NewsExample> train;
  std::vector<NewsExample> valid;
  std::vector<NewsExample> test;
};

struct SplitFractions {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

// News-level split after a seeded shuffle. Item counts per split follow the
// largest-remainder rule. Throws std::invalid_argument unless the fractions
// are non-negative and sum to 1.
Splits split(const Corpus& corpus, const SplitFractions& fractions, std::uint64_t seed);

struct SynthOptions {
  std::uint64_t seed = 7;
  std::size_t news = 200;
  std::size_t comments_per_news = 10;
};

// Deterministic synthetic corpus. HIGH comments quote the title and the
// abstract and add words their siblings do not use. LOW comments are short
// generic remarks, quotes of another item's title or abstract, or repeated
// copies of one remark.
Corpus synth_generate(const SynthOptions& options);

}  // namespace mtm
