#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "advpicker/error.hpp"
#include "advpicker/selection.hpp"
#include "oracles.hpp"

using namespace advpicker;
namespace fs = std::filesystem;

namespace {

Corpus make_target(std::size_t n, std::mt19937_64& rng) {
  Corpus c;
  for (std::size_t i = 0; i < n; ++i) {
    Sentence s{.id = static_cast<std::int64_t>(i), .language = Language::target};
    const auto len = std::uniform_int_distribution<std::size_t>(1, 5)(rng);
    for (std::size_t j = 0; j < len; ++j) s.tokens.push_back("t" + std::to_string(j));
    s.gold_tags = std::vector<TagId>(len, 0);
    c.sentences.push_back(std::move(s));
  }
  return c;
}

std::vector<TeacherOutput> random_outputs(const Corpus& c, std::mt19937_64& rng) {
  std::vector<TeacherOutput> out;
  for (const auto& s : c.sentences) {
    const auto n = static_cast<Eigen::Index>(s.size());
    Vector probs = oracle::random_matrix(rng, n, 1, 0.0, 1.0).col(0);
    out.push_back({s.id, oracle::random_distribution(rng, n, 9), probs});
  }
  return out;
}

std::vector<PseudoLabeledSentence> scored(std::span<const double> scores) {
  std::vector<PseudoLabeledSentence> items;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    PseudoLabeledSentence p;
    p.sentence.id = static_cast<std::int64_t>(i);
    p.sentence.tokens = {"x"};
    p.soft_labels = Matrix::Constant(1, 9, 1.0 / 9.0);
    p.l_score = scores[i];
    items.push_back(std::move(p));
  }
  return items;
}

std::set<std::int64_t> ids_of(const std::vector<PseudoLabeledSentence>& items) {
  std::set<std::int64_t> out;
  for (const auto& p : items) out.insert(p.sentence.id);
  return out;
}

}  // namespace

TEST_CASE("l_score values") {
  CHECK(l_score(0.5) == 1.0);
  CHECK(l_score(0.0) == 0.5);
  CHECK(l_score(1.0) == 0.5);
  CHECK(l_score(0.8) == doctest::Approx(0.7));
}

TEST_CASE("l_score laws") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double p = u(rng);
    CHECK(l_score(p) == 1.0 - std::abs(p - 0.5));
    CHECK(l_score(p) == doctest::Approx(l_score(1.0 - p)).epsilon(1e-15));
    CHECK(l_score(p) >= 0.5);
    CHECK(l_score(p) <= 1.0);
    const double q = u(rng);
    if (std::abs(p - 0.5) < std::abs(q - 0.5)) CHECK(l_score(p) > l_score(q));
  }
}

TEST_CASE("sentence pooling") {
  const std::vector<double> half = {0.5, 0.5, 0.5};
  const std::vector<double> pair = {0.2, 0.8};
  const std::vector<double> one = {0.9};
  CHECK(sentence_source_prob(half) == 0.5);
  CHECK(sentence_source_prob(pair) == doctest::Approx(0.5));
  CHECK(sentence_source_prob(one) == 0.9);
  CHECK(sentence_source_prob(pair, Pooling::max) == 0.8);
  CHECK(sentence_source_prob(pair, Pooling::first_token) == 0.2);
  CHECK_THROWS_AS(sentence_source_prob(std::vector<double>{}), EmptyInput);

  for (auto p : {Pooling::mean, Pooling::max, Pooling::first_token}) CHECK(parse_pooling(to_string(p)) == p);
  CHECK_THROWS_AS(parse_pooling("median"), ConfigError);
}

TEST_CASE("confidence sum") {
  Matrix m(2, 3);
  m << 0.2, 0.5, 0.3, 0.9, 0.05, 0.05;
  CHECK(confidence_sum(m) == doctest::Approx(1.4));
}

TEST_CASE("merging teacher outputs") {
  std::mt19937_64 rng(5);
  const Corpus target = make_target(12, rng);

  SUBCASE("a single teacher passes through") {
    const std::vector<std::vector<TeacherOutput>> one = {random_outputs(target, rng)};
    const auto merged = merge_seeds(one, target);
    REQUIRE(merged.size() == target.size());
    for (std::size_t i = 0; i < merged.size(); ++i) {
      CHECK(merged[i].soft_labels == one[0][i].soft_labels);
      CHECK(merged[i].source_prob == doctest::Approx(one[0][i].token_source_prob.mean()));
      CHECK(merged[i].l_score == l_score(merged[i].source_prob));
      CHECK(merged[i].seed_index == 0);
      CHECK_FALSE(merged[i].sentence.gold_tags.has_value());
    }
  }
  SUBCASE("the more confident teacher wins, ties go to the lower index") {
    Corpus one_sentence;
    one_sentence.sentences.push_back({.id = 0, .tokens = {"a", "b", "c", "d", "e"}});
    Matrix strong = Matrix::Zero(5, 9);
    Matrix weak = Matrix::Constant(5, 9, 0.02);
    strong.col(0).setConstant(1.0);
    weak.col(1).setConstant(0.84);
    const Vector pa = Vector::Constant(5, 0.9);
    const Vector pb = Vector::Constant(5, 0.4);
    CHECK(confidence_sum(strong) == doctest::Approx(5.0));
    CHECK(confidence_sum(weak) == doctest::Approx(4.2));

    std::vector<std::vector<TeacherOutput>> per_seed = {{{0, weak, pb}}, {{0, strong, pa}}};
    auto merged = merge_seeds(per_seed, one_sentence);
    CHECK(merged[0].seed_index == 1);
    CHECK(merged[0].soft_labels == strong);
    CHECK(merged[0].source_prob == doctest::Approx(0.9));

    per_seed = {{{0, strong, pb}}, {{0, strong, pa}}};
    merged = merge_seeds(per_seed, one_sentence);
    CHECK(merged[0].seed_index == 0);
    CHECK(merged[0].source_prob == doctest::Approx(0.4));
  }
  SUBCASE("misaligned outputs") {
    std::vector<std::vector<TeacherOutput>> per_seed = {random_outputs(target, rng)};
    per_seed[0].pop_back();
    CHECK_THROWS_AS(merge_seeds(per_seed, target), AlignmentError);
    CHECK_THROWS_AS(merge_seeds(std::span<const std::vector<TeacherOutput>>{}, target), EmptyInput);
  }
}

TEST_CASE("top-rho selection examples") {
  SUBCASE("eight of ten distinct scores") {
    std::vector<double> s = {0.55, 0.9, 0.6, 0.95, 0.7, 0.51, 0.8, 0.65, 0.99, 0.75};
    const auto r = select_top_rho(scored(s), 0.8);
    CHECK(r.selected.size() == 8);
    CHECK(ids_of(r.rejected) == std::set<std::int64_t>{0, 5});
  }
  SUBCASE("rho one keeps everything") {
    std::vector<double> s = {0.5, 0.7, 0.6};
    const auto r = select_top_rho(scored(s), 1.0);
    CHECK(r.selected.size() == 3);
    CHECK(r.rejected.empty());
  }
  SUBCASE("equal scores keep the lowest ids") {
    std::vector<double> s(5, 0.75);
    const auto r = select_top_rho(scored(s), 0.8);
    CHECK(ids_of(r.selected) == std::set<std::int64_t>{0, 1, 2, 3});
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(select_top_rho({}, 0.8), EmptyInput);
    std::vector<double> s = {0.6};
    CHECK_THROWS_AS(select_top_rho(scored(s), 0.0), ConfigError);
    CHECK_THROWS_AS(select_top_rho(scored(s), 1.5), ConfigError);
  }
}

TEST_CASE("top-rho selection laws") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.5, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = std::uniform_int_distribution<std::size_t>(1, 40)(rng);
    std::vector<double> s(n);
    // coarse grid so ties happen
    for (auto& x : s) x = std::round(u(rng) * 20.0) / 20.0;
    const double rho = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
    const auto r = select_top_rho(scored(s), rho);

    CHECK(r.selected.size() == static_cast<std::size_t>(std::ceil(rho * static_cast<double>(n))));
    CHECK(r.selected.size() + r.rejected.size() == n);
    double min_sel = 2.0, max_rej = 0.0;
    for (const auto& p : r.selected) min_sel = std::min(min_sel, p.l_score);
    for (const auto& p : r.rejected) max_rej = std::max(max_rej, p.l_score);
    CHECK(min_sel >= max_rej);
    for (const auto& a : r.rejected) {
      for (const auto& b : r.selected) {
        if (a.l_score == b.l_score) CHECK(b.sentence.id < a.sentence.id);
      }
    }

    const double higher = std::min(1.0, rho + std::uniform_real_distribution<double>(0.0, 0.5)(rng));
    const auto wider = select_top_rho(scored(s), higher);
    const auto small = ids_of(r.selected);
    const auto large = ids_of(wider.selected);
    CHECK(std::includes(large.begin(), large.end(), small.begin(), small.end()));

    std::vector<ScoredSentence> bare;
    for (std::size_t i = 0; i < n; ++i) bare.push_back({static_cast<std::int64_t>(i), s[i]});
    const auto ids = select_top_rho_ids(bare, rho);
    CHECK(std::set<std::int64_t>(ids.begin(), ids.end()) == small);
  }
}

TEST_CASE("manifest and soft-label store round trip") {
  const auto dir = fs::temp_directory_path() / "advpicker_selection_io";
  fs::create_directories(dir);
  std::mt19937_64 rng(8);
  const Corpus target = make_target(9, rng);
  const std::vector<std::vector<TeacherOutput>> per_seed = {random_outputs(target, rng), random_outputs(target, rng)};
  const auto result = select_top_rho(merge_seeds(per_seed, target), 0.8);
  const std::vector<std::uint64_t> seeds = {13, 42};

  const auto records = manifest_records(result, seeds);
  REQUIRE(records.size() == target.size());
  for (std::size_t i = 0; i < records.size(); ++i) CHECK(records[i].id == static_cast<std::int64_t>(i));
  write_manifest(records, dir / "manifest.jsonl");
  const auto back = read_manifest(dir / "manifest.jsonl");
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == records[i].id);
    CHECK(back[i].source_prob == records[i].source_prob);
    CHECK(back[i].l_score == records[i].l_score);
    CHECK(back[i].selected == records[i].selected);
    CHECK((back[i].seed == 13 || back[i].seed == 42));
  }

  std::vector<PseudoLabeledSentence> all = result.selected;
  all.insert(all.end(), result.rejected.begin(), result.rejected.end());
  write_soft_labels(all, dir / "soft.bin");
  const auto soft = read_soft_labels(dir / "soft.bin");
  REQUIRE(soft.size() == all.size());
  for (const auto& p : all) CHECK(soft.at(p.sentence.id) == p.soft_labels);

  const auto reloaded = load_selection(back, soft, target, 0.8);
  CHECK(ids_of(reloaded.selected) == ids_of(result.selected));
  for (const auto& p : reloaded.selected) CHECK_FALSE(p.sentence.gold_tags.has_value());

  std::ofstream(dir / "broken.jsonl") << "{\"id\": 1}\nnot json\n";
  CHECK_THROWS_AS(read_manifest(dir / "broken.jsonl"), FormatError);
  CHECK_THROWS_AS(read_soft_labels(dir / "manifest.jsonl"), IOError);
  fs::remove_all(dir);
}
