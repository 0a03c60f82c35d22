#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "mtm/corpus.hpp"
#include "support.hpp"

using namespace mtm;

namespace {

Tokens words(std::size_t n, const std::string& stem = "w") {
  Tokens t;
  for (std::size_t i = 0; i < n; ++i) t.push_back(stem + std::to_string(i));
  return t;
}

CommentRecord comment(Tokens text, long long likes = 0) {
  return {std::move(text), likes, 0, label_for_likes(likes)};
}

NewsExample news_with(std::size_t comments, std::size_t id = 0) {
  NewsExample n;
  n.id = id;
  n.title = words(6, "t");
  n.abstract = words(8, "a");
  n.type = "world";
  for (std::size_t i = 0; i < comments; ++i) n.comments.push_back(comment(words(5, "c" + std::to_string(i) + "_"), 0));
  return n;
}

const char* kHeader = R"({"schema":"mtm-corpus-v1","types":["tech","world"]})";

}  // namespace

TEST_CASE("labels follow a strict likes > 10 rule") {
  CHECK(label_for_likes(247) == Label::high);
  CHECK(label_for_likes(0) == Label::low);
  CHECK(label_for_likes(10) == Label::low);
  CHECK(label_for_likes(11) == Label::high);
}

TEST_CASE("parsing assigns labels and keeps the body") {
  std::istringstream in(std::string(kHeader) + "\n" +
                        R"({"title":["a"],"abstract":["b"],"body":["x","y"],"type":"tech","comments":[)"
                        R"({"text":["q"],"likes":247,"replies":3},{"text":["r"],"likes":0,"replies":0}]})" "\n\n");
  const Corpus c = parse_corpus(in);
  REQUIRE(c.news.size() == 1);
  CHECK(c.news[0].body.size() == 2);
  CHECK(c.news[0].comments[0].label == Label::high);
  CHECK(c.news[0].comments[0].replies == 3);
  CHECK(c.news[0].comments[1].label == Label::low);
}

TEST_CASE("parse errors report the offending line") {
  auto line_of = [](const std::string& text) -> std::size_t {
    std::istringstream in(text);
    try {
      parse_corpus(in);
    } catch (const CorpusError& e) {
      return e.line;
    }
    return 9999;
  };
  const std::string good = R"({"title":["a"],"abstract":["b"],"type":"tech","comments":[]})";
  CHECK(line_of(R"({"schema":"mtm-corpus-v2","types":[]})") == 1);
  CHECK(line_of(std::string(kHeader) + "\n" + good + "\n" +
                R"({"abstract":["b"],"type":"tech","comments":[]})") == 3);
  CHECK(line_of(std::string(kHeader) + "\n" +
                R"({"title":["a"],"abstract":["b"],"type":"tech","comments":[{"text":["x"],"likes":-1,"replies":0}]})") == 2);
  CHECK(line_of(std::string(kHeader) + "\n" + R"({"title":["a"],"abstract":["b"],"type":"sport","comments":[]})") == 2);
  CHECK(line_of(std::string(kHeader) + "\n{not json") == 2);
  CHECK(line_of(good) == 1);
  CHECK(line_of("") == 0);
}

TEST_CASE("corpus round-trips through the file format") {
  const Corpus c = synth_generate({3, 5, 4});
  std::istringstream in(corpus_to_string(c));
  const Corpus back = parse_corpus(in);
  CHECK(corpus_to_string(back) == corpus_to_string(c));
}

TEST_CASE("length filter boundaries") {
  Corpus c;
  c.types = {"world"};
  NewsExample n = news_with(0);
  n.comments = {comment(words(4)), comment(words(5)), comment(words(200)), comment(words(201))};
  c.news.push_back(n);
  NewsExample long_title = news_with(2, 1);
  long_title.title = words(201);
  c.news.push_back(long_title);
  NewsExample short_abstract = news_with(2, 2);
  short_abstract.abstract = words(4);
  c.news.push_back(short_abstract);

  const FilterReport r = filter_lengths(c);
  REQUIRE(c.news.size() == 1);
  CHECK(r.dropped_news == 2);
  CHECK(r.dropped_comments == 2 + 2 * 2);
  CHECK(c.news[0].comments.size() == 2);
  CHECK(c.news[0].comments[0].text == words(5));
  CHECK(c.news[0].comments[1].text.size() == 200);
}

TEST_CASE("relabel is idempotent") {
  Corpus c = synth_generate({5, 4, 6});
  for (auto& n : c.news)
    for (auto& cm : n.comments) cm.label = Label::low;
  relabel(c);
  const std::string once = corpus_to_string(c);
  relabel(c);
  CHECK(corpus_to_string(c) == once);
}

TEST_CASE("vocabulary ids") {
  NewsExample n;
  n.title = {"a", "a", "b"};
  n.abstract = {};
  n.body = {"z", "z", "z"};
  SUBCASE("min count 1 keeps every token") {
    const Vocabulary v = build_vocab({n}, 1);
    CHECK(v.size() == 5);
    CHECK(v.id("a") == 3);
    CHECK(v.id("b") == 4);
    CHECK(v.id("z") == Vocabulary::kUnk);
  }
  SUBCASE("min count 2 maps rare tokens to UNK") {
    const Vocabulary v = build_vocab({n}, 2);
    CHECK(v.size() == 4);
    CHECK(v.id("b") == Vocabulary::kUnk);
  }
  SUBCASE("ties break lexicographically") {
    NewsExample m;
    m.title = {"y", "x", "x", "y", "w"};
    const Vocabulary v = build_vocab({m}, 1);
    CHECK(v.entries() == std::vector<std::string>{"x", "y", "w"});
  }
  SUBCASE("reserved spellings") {
    const Vocabulary v;
    CHECK(v.token(Vocabulary::kPad) == "<pad>");
    CHECK(v.token(Vocabulary::kUnk) == "<unk>");
    CHECK(v.token(Vocabulary::kSep) == "<sep>");
  }
  CHECK_THROWS(build_vocab({}, 1));
}

TEST_CASE("vocabulary build is deterministic and decode/encode round-trips") {
  const Corpus c = synth_generate({11, 20, 8});
  const Vocabulary a = build_vocab(c.news, 2), b = build_vocab(c.news, 2);
  CHECK(a.entries() == b.entries());
  for (const auto& n : c.news) {
    for (const auto& inst : make_instances(n, 3)) {
      const EncodedInstance e = encode_instance(inst, a);
      const Tokens decoded = a.decode(e.comment);
      CHECK(a.encode(decoded) == e.comment);
      for (std::size_t i = 0; i < decoded.size(); ++i) {
        if (a.contains(inst.comment.text[i])) CHECK(decoded[i] == inst.comment.text[i]);
      }
    }
  }
}

TEST_CASE("surrounding selection") {
  SUBCASE("K = 0 gives no surroundings") {
    for (const auto& inst : make_instances(news_with(6), 0)) CHECK(inst.surroundings.empty());
  }
  SUBCASE("two comments and K = 5 give one surrounding each") {
    for (const auto& inst : make_instances(news_with(2), 5)) CHECK(inst.surroundings.size() == 1);
  }
  SUBCASE("K = 5 on ten comments never includes the target") {
    const NewsExample n = news_with(10);
    for (std::size_t t = 0; t < 10; ++t) {
      const auto idx = select_surroundings(n.comments, t, 5, SelectionPolicy::nearest);
      CHECK(idx.size() == 5);
      CHECK(std::find(idx.begin(), idx.end(), t) == idx.end());
      CHECK(std::is_sorted(idx.begin(), idx.end()));
    }
  }
  SUBCASE("nearest prefers earlier comments on ties") {
    const NewsExample n = news_with(10);
    CHECK(select_surroundings(n.comments, 5, 3, SelectionPolicy::nearest) == std::vector<std::size_t>{3, 4, 6});
    CHECK(select_surroundings(n.comments, 0, 2, SelectionPolicy::nearest) == std::vector<std::size_t>{1, 2});
  }
  SUBCASE("top-liked picks the most liked, returned in list order") {
    NewsExample n = news_with(5);
    const long long likes[] = {3, 50, 7, 50, 1};
    for (std::size_t i = 0; i < 5; ++i) n.comments[i].likes = likes[i];
    CHECK(select_surroundings(n.comments, 1, 2, SelectionPolicy::top_liked) == std::vector<std::size_t>{2, 3});
    CHECK(select_surroundings(n.comments, 4, 2, SelectionPolicy::top_liked) == std::vector<std::size_t>{1, 3});
  }
  CHECK(parse_policy("top-liked") == SelectionPolicy::top_liked);
  CHECK_THROWS(parse_policy("random"));
}

TEST_CASE("news-level split") {
  Corpus c;
  c.types = {"world"};
  for (std::size_t i = 0; i < 10; ++i) c.news.push_back(news_with(3, i));
  SUBCASE("8/1/1 counts") {
    const Splits s = split(c, {0.8, 0.1, 0.1}, 1);
    CHECK(s.train.size() == 8);
    CHECK(s.valid.size() == 1);
    CHECK(s.test.size() == 1);
    std::set<std::size_t> ids;
    for (const auto* part : {&s.train, &s.valid, &s.test})
      for (const auto& n : *part) CHECK(ids.insert(n.id).second);
    CHECK(ids.size() == 10);
  }
  SUBCASE("everything in train") {
    const Splits s = split(c, {1.0, 0.0, 0.0}, 1);
    CHECK(s.train.size() == 10);
  }
  SUBCASE("deterministic under seed") {
    auto ids = [](const Splits& s) {
      std::vector<std::size_t> out;
      for (const auto& n : s.valid) out.push_back(n.id);
      for (const auto& n : s.test) out.push_back(n.id);
      return out;
    };
    CHECK(ids(split(c, {0.6, 0.2, 0.2}, 9)) == ids(split(c, {0.6, 0.2, 0.2}, 9)));
  }
  CHECK_THROWS_AS(split(c, {0.5, 0.1, 0.1}, 1), std::invalid_argument);
  CHECK_THROWS_AS(split(c, {1.2, -0.1, -0.1}, 1), std::invalid_argument);
}

TEST_CASE("split counts follow largest remainders over many sizes") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    Corpus c;
    c.types = {"world"};
    const std::size_t n = test::pick(rng, 1, 40);
    for (std::size_t i = 0; i < n; ++i) c.news.push_back(news_with(1, i));
    const Splits s = split(c, {0.8, 0.1, 0.1}, seed);
    CHECK(s.train.size() + s.valid.size() + s.test.size() == n);
    CHECK(std::abs(static_cast<double>(s.train.size()) - 0.8 * n) < 1.0);
    CHECK(std::abs(static_cast<double>(s.valid.size()) - 0.1 * n) < 1.0);
  }
}

TEST_CASE("synthetic corpus statistics") {
  const Corpus c = synth_generate({});
  CHECK(corpus_to_string(c) == corpus_to_string(synth_generate({})));
  CHECK(c.news.size() == 200);
  CHECK(c.comment_count() == 2000);

  double high_len = 0, low_len = 0, high_overlap = 0, low_overlap = 0;
  std::size_t highs = 0, lows = 0;
  for (const auto& n : c.news) {
    const std::set<std::string> title(n.title.begin(), n.title.end());
    const std::set<std::string> abstract(n.abstract.begin(), n.abstract.end());
    for (const auto& cm : n.comments) {
      CHECK(cm.text.size() >= kMinTextLength);
      std::size_t shared = 0;
      for (const auto& w : cm.text) shared += title.contains(w) || abstract.contains(w);
      const double overlap = static_cast<double>(shared) / static_cast<double>(cm.text.size());
      if (cm.label == Label::high) {
        ++highs;
        high_len += static_cast<double>(cm.text.size());
        high_overlap += overlap;
      } else {
        ++lows;
        low_len += static_cast<double>(cm.text.size());
        low_overlap += overlap;
      }
    }
  }
  const double high_share = static_cast<double>(highs) / static_cast<double>(highs + lows);
  CHECK(high_share > 0.5);
  CHECK(high_share < 0.6);
  CHECK(high_len / highs > low_len / lows);
  CHECK(high_overlap / highs > low_overlap / lows);
  CHECK(high_overlap / highs >= 0.4 * 0.99);
}
