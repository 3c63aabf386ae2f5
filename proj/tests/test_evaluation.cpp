#include <doctest.h>

#include <algorithm>
#include <random>

#include "advpicker/evaluation.hpp"
#include "oracles.hpp"

using namespace advpicker;

namespace {

const LabelSet one_type({"X"});

TagId tag(const std::string& name) { return *LabelSet::conll().index(name); }

std::vector<std::vector<EntitySpan>> spans_all(const std::vector<std::vector<TagId>>& seqs, const LabelSet& ls) {
  std::vector<std::vector<EntitySpan>> out;
  for (const auto& s : seqs) out.push_back(extract_spans(s, ls));
  return out;
}

/// Copy of `gold` with some spans dropped, retyped or shifted.
std::vector<TagId> perturb(const std::vector<TagId>& gold, std::mt19937_64& rng, int types) {
  auto out = gold;
  std::bernoulli_distribution flip(0.3);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!flip(rng)) continue;
    out = oracle::random_bio(rng, gold.size(), types);
    break;
  }
  if (flip(rng) && !out.empty()) {
    const auto i = std::uniform_int_distribution<std::size_t>(0, out.size() - 1)(rng);
    const int type = std::uniform_int_distribution<int>(0, types - 1)(rng);
    out[i] = LabelSet::begin_tag(type);
    for (auto j = i + 1; j < out.size() && LabelSet::is_inside(out[j]); ++j) out[j] = LabelSet::inside_tag(type);
  }
  return out;
}

}  // namespace

TEST_CASE("viterbi examples") {
  SUBCASE("one-hot rows return their sequence") {
    const std::vector<TagId> gold = {tag("B-PER"), tag("I-PER"), tag("O"), tag("B-LOC")};
    Matrix p = Matrix::Zero(4, 9);
    for (int i = 0; i < 4; ++i) p(i, gold[static_cast<std::size_t>(i)]) = 1.0;
    CHECK(viterbi_decode(p, LabelSet::conll()) == gold);
  }
  SUBCASE("two tokens, one type") {
    Matrix p(2, 3);
    p << 0.1, 0.6, 0.3, 0.05, 0.05, 0.9;
    const std::vector<TagId> expect = {1, 2};
    CHECK(viterbi_decode(p, one_type) == expect);
    CHECK(oracle::brute_force_decode(p) == expect);
  }
  SUBCASE("greedy orphan is repaired") {
    Matrix p(2, 3);
    p << 0.6, 0.3, 0.1, 0.05, 0.05, 0.9;
    const auto path = viterbi_decode(p, one_type);
    CHECK(path != std::vector<TagId>{0, 2});
    CHECK(oracle::bio_valid(path));
  }
  SUBCASE("empty and mismatched input") {
    CHECK(viterbi_decode(Matrix(0, 9), LabelSet::conll()).empty());
    CHECK_THROWS_AS(viterbi_decode(Matrix::Ones(2, 4), LabelSet::conll()), ShapeError);
  }
}

TEST_CASE("viterbi matches exhaustive search") {
  std::mt19937_64 rng(123);
  const auto ls = LabelSet::conll();
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = std::uniform_int_distribution<Eigen::Index>(1, 6)(rng);
    const Matrix p = oracle::random_distribution(rng, n, 9);
    const auto path = viterbi_decode(p, ls);
    const auto best = oracle::brute_force_decode(p);
    CHECK(oracle::path_score(p, path) == doctest::Approx(oracle::path_score(p, best)).epsilon(1e-12));
    CHECK(path == best);
  }
}

TEST_CASE("viterbi output is always valid") {
  std::mt19937_64 rng(77);
  const auto ls = LabelSet::conll();
  for (int trial = 0; trial < 10000; ++trial) {
    const auto n = std::uniform_int_distribution<Eigen::Index>(1, 12)(rng);
    const auto path = viterbi_decode(oracle::random_distribution(rng, n, 9), ls);
    REQUIRE(oracle::bio_valid(path));
  }
}

TEST_CASE("span extraction") {
  const auto ls = LabelSet::conll();
  const std::vector<TagId> a = {tag("B-PER"), tag("I-PER"), tag("O")};
  CHECK(extract_spans(a, ls) == std::vector<EntitySpan>{{"PER", 0, 1}});
  CHECK(extract_spans(std::vector<TagId>{0, 0, 0}, ls).empty());
  const std::vector<TagId> twice = {tag("B-PER"), tag("B-PER")};
  CHECK(extract_spans(twice, ls) == std::vector<EntitySpan>{{"PER", 0, 0}, {"PER", 1, 1}});
  CHECK_THROWS_AS(extract_spans(std::vector<TagId>{tag("I-LOC")}, ls), InvalidBIO);
}

TEST_CASE("entity F1 examples") {
  const std::vector<std::vector<EntitySpan>> gold = {{{"PER", 0, 1}}};
  SUBCASE("perfect") { CHECK(entity_f1(gold, gold).f1 == 1.0); }
  SUBCASE("nothing predicted") {
    const std::vector<std::vector<EntitySpan>> none = {{}};
    const auto r = entity_f1(gold, none);
    CHECK(r.f1 == 0.0);
    CHECK(r.precision == 0.0);
  }
  SUBCASE("one of two predictions right") {
    const std::vector<std::vector<EntitySpan>> pred = {{{"PER", 0, 1}, {"LOC", 3, 3}}};
    const auto r = entity_f1(gold, pred);
    CHECK(r.precision == 0.5);
    CHECK(r.recall == 1.0);
    CHECK(r.f1 == doctest::Approx(2.0 / 3.0));
    CHECK(r.per_type.at("PER").f1 == 1.0);
    CHECK(r.per_type.at("LOC").precision == 0.0);
  }
  SUBCASE("boundary mismatch is wrong") {
    const std::vector<std::vector<EntitySpan>> pred = {{{"PER", 0, 0}}};
    CHECK(entity_f1(gold, pred).counts.correct == 0);
  }
  SUBCASE("sentence counts must agree") {
    const std::vector<std::vector<EntitySpan>> two = {{}, {}};
    CHECK_THROWS_AS(entity_f1(gold, two), AlignmentError);
  }
}

TEST_CASE("entity F1 matches a brute-force scorer") {
  std::mt19937_64 rng(99);
  const auto ls = LabelSet::conll();
  for (int trial = 0; trial < 200; ++trial) {
    const auto sentences = std::uniform_int_distribution<std::size_t>(0, 12)(rng);
    std::vector<std::vector<TagId>> gold, pred;
    for (std::size_t s = 0; s < sentences; ++s) {
      const auto n = std::uniform_int_distribution<std::size_t>(0, 10)(rng);
      gold.push_back(oracle::random_bio(rng, n, 4));
      pred.push_back(perturb(gold.back(), rng, 4));
    }
    const auto expect = oracle::brute_force_f1(gold, pred);
    const auto got = entity_f1(spans_all(gold, ls), spans_all(pred, ls));
    CHECK(got.counts.gold == expect.gold);
    CHECK(got.counts.predicted == expect.predicted);
    CHECK(got.counts.correct == expect.correct);
    CHECK(got.precision == expect.precision);
    CHECK(got.recall == expect.recall);
    CHECK(got.f1 == expect.f1);
  }
}

TEST_CASE("scoring decoded distributions") {
  Corpus c;
  c.sentences.push_back({.id = 0, .tokens = {"a", "b"}, .gold_tags = std::vector<TagId>{tag("B-ORG"), tag("I-ORG")}});
  c.sentences.push_back({.id = 1, .tokens = {"c"}, .gold_tags = std::vector<TagId>{0}});
  std::vector<Matrix> probs;
  for (const auto& s : c.sentences) {
    Matrix p = Matrix::Constant(static_cast<Eigen::Index>(s.size()), 9, 0.01);
    for (std::size_t i = 0; i < s.size(); ++i) p(static_cast<Eigen::Index>(i), (*s.gold_tags)[i]) = 0.92;
    probs.push_back(p);
  }
  CHECK(evaluate_probs(c, probs).f1 == 1.0);
  CHECK(decode_all(probs, c.label_set)[0] == *c.sentences[0].gold_tags);
  const std::vector<std::vector<TagId>> blank = {{0, 0}, {0}};
  CHECK(evaluate_tags(c, blank).f1 == 0.0);
}

TEST_CASE("probe limits") {
  std::mt19937_64 rng(5);
  ProbeConfig cfg{.epochs = 5, .lr = 1e-2, .hidden_dim = 8, .batch_tokens = 64, .seed = 1};
  auto labels = [&](std::size_t n) {
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<double>(i % 2);
    return y;
  };
  const std::size_t n = 2000;
  const auto y_train = labels(n);
  const auto y_test = labels(n);

  SUBCASE("identical features carry no signal") {
    Matrix train = Matrix::Zero(n, 4), test = Matrix::Zero(n, 4);
    for (std::size_t i = 0; i < n; i += 2) {
      train.row(static_cast<Eigen::Index>(i)) = oracle::random_matrix(rng, 1, 4);
      train.row(static_cast<Eigen::Index>(i + 1)) = train.row(static_cast<Eigen::Index>(i));
      test.row(static_cast<Eigen::Index>(i)) = oracle::random_matrix(rng, 1, 4);
      test.row(static_cast<Eigen::Index>(i + 1)) = test.row(static_cast<Eigen::Index>(i));
    }
    CHECK(std::abs(probe_features(train, y_train, test, y_test, cfg) - 0.5) <= 0.05);
  }
  SUBCASE("a language bit is found") {
    Matrix train = oracle::random_matrix(rng, n, 4), test = oracle::random_matrix(rng, n, 4);
    for (std::size_t i = 0; i < n; ++i) {
      train(static_cast<Eigen::Index>(i), 0) = 3.0 * y_train[i];
      test(static_cast<Eigen::Index>(i), 0) = 3.0 * y_test[i];
    }
    CHECK(probe_features(train, y_train, test, y_test, cfg) >= 0.99);
  }
  SUBCASE("shuffled labels fall to chance") {
    Matrix train = oracle::random_matrix(rng, n, 4), test = oracle::random_matrix(rng, n, 4);
    for (std::size_t i = 0; i < n; ++i) {
      train(static_cast<Eigen::Index>(i), 0) = 3.0 * y_train[i];
      test(static_cast<Eigen::Index>(i), 0) = 3.0 * y_test[i];
    }
    auto train_y = y_train, test_y = y_test;
    std::shuffle(train_y.begin(), train_y.end(), rng);
    std::shuffle(test_y.begin(), test_y.end(), rng);
    const double acc = probe_features(train, train_y, test, test_y, cfg);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
    CHECK(std::abs(acc - 0.5) <= 0.05);
  }
  SUBCASE("input checks") {
    const Matrix x = Matrix::Zero(4, 2);
    const std::vector<double> short_y = {1.0};
    CHECK_THROWS_AS(probe_features(x, short_y, x, y_test, cfg), AlignmentError);
    CHECK_THROWS_AS(probe_features(Matrix(0, 2), {}, x, labels(4), cfg), EmptyInput);
  }
}

TEST_CASE("selected and other partitions") {
  std::mt19937_64 rng(31);
  Corpus test;
  std::vector<Matrix> probs;
  std::vector<double> scores;
  for (int i = 0; i < 11; ++i) {
    const auto gold = oracle::random_bio(rng, 5, 4);
    test.sentences.push_back({.id = i, .tokens = std::vector<std::string>(5, "x"), .gold_tags = gold});
    probs.push_back(oracle::random_distribution(rng, 5, 9));
    scores.push_back(std::uniform_real_distribution<double>(0.5, 1.0)(rng));
  }
  const auto whole = evaluate_probs(test, probs);

  const auto all = split_eval(test, scores, probs, 1.0);
  CHECK(all.other_ids.empty());
  CHECK(all.selected.f1 == whole.f1);
  CHECK(all.selected.counts.gold == whole.counts.gold);

  const auto part = split_eval(test, scores, probs, 0.5);
  CHECK(part.selected_ids.size() == 6);
  CHECK(part.other_ids.size() == 5);
  CHECK(part.selected.counts.gold + part.other.counts.gold == whole.counts.gold);
  CHECK(part.selected.counts.correct + part.other.counts.correct == whole.counts.correct);
  double min_sel = 1.0;
  for (auto id : part.selected_ids) min_sel = std::min(min_sel, scores[static_cast<std::size_t>(id)]);
  for (auto id : part.other_ids) CHECK(scores[static_cast<std::size_t>(id)] <= min_sel);

  CHECK_THROWS_AS(split_eval(test, std::vector<double>(3, 0.6), probs, 0.5), AlignmentError);
}

TEST_CASE("rank correlation") {
  const std::vector<double> x = {1, 2, 3, 4, 5};
  const std::vector<double> up = {10, 20, 25, 40, 100};
  const std::vector<double> down = {5, 4, 3, 2, 1};
  CHECK(rank_correlation(x, up) == doctest::Approx(1.0));
  CHECK(rank_correlation(x, down) == doctest::Approx(-1.0));
  const std::vector<double> ties = {1, 1, 2, 2, 3};
  CHECK(rank_correlation(ties, ties) == doctest::Approx(1.0));
  const std::vector<double> a = {1, 2, 3, 4};
  const std::vector<double> b = {1, 3, 2, 4};
  CHECK(rank_correlation(a, b) == doctest::Approx(0.8));
}
