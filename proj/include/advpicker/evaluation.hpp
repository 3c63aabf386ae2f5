#pragma once

#include <compare>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "advpicker/corpus.hpp"
#include "advpicker/error.hpp"
#include "advpicker/kernels.hpp"
#include "advpicker/models.hpp"

namespace advpicker {

/// BIO-constrained Viterbi: the highest sum of log-probabilities over tag paths
/// whose transitions are all BIO-valid. Ties go to the lower tag index.
template <typename Derived>
std::vector<TagId> viterbi_decode(const Eigen::MatrixBase<Derived>& probs, const LabelSet& label_set) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = probs.rows();
  const Eigen::Index k = probs.cols();
  if (k != static_cast<Eigen::Index>(label_set.size())) {
    throw ShapeError("viterbi_decode: " + std::to_string(k) + " columns for " +
                     std::to_string(label_set.size()) + " tags");
  }
  if (n == 0) return {};

  const auto logp = kernels::safe_log(probs);
  constexpr Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();
  kernels::PlainMatrix<Derived> score(n, k);
  Eigen::MatrixXi back(n, k);
  for (Eigen::Index t = 0; t < k; ++t) {
    score(0, t) = LabelSet::allowed(std::nullopt, static_cast<TagId>(t)) ? logp(0, t) : neg_inf;
  }
  for (Eigen::Index i = 1; i < n; ++i) {
    for (Eigen::Index t = 0; t < k; ++t) {
      Scalar best = neg_inf;
      int arg = 0;
      for (Eigen::Index s = 0; s < k; ++s) {
        if (!LabelSet::allowed(static_cast<TagId>(s), static_cast<TagId>(t))) continue;
        if (score(i - 1, s) > best) {
          best = score(i - 1, s);
          arg = static_cast<int>(s);
        }
      }
      score(i, t) = best + logp(i, t);
      back(i, t) = arg;
    }
  }
  Eigen::Index last = 0;
  score.row(n - 1).maxCoeff(&last);
  std::vector<TagId> path(static_cast<std::size_t>(n));
  path.back() = static_cast<TagId>(last);
  for (Eigen::Index i = n - 1; i > 0; --i) {
    path[static_cast<std::size_t>(i - 1)] = back(i, path[static_cast<std::size_t>(i)]);
  }
  return path;
}

struct EntitySpan {
  std::string type;
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive

  auto operator<=>(const EntitySpan&) const = default;
};

/// Maximal B-initiated runs. Throws InvalidBIO on an invalid sequence.
std::vector<EntitySpan> extract_spans(std::span<const TagId> tags, const LabelSet& label_set);

struct Counts {
  std::size_t gold = 0;
  std::size_t predicted = 0;
  std::size_t correct = 0;
};

struct Score {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Counts counts;

  static Score from(const Counts& c);
};

struct EvalReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Counts counts;
  std::map<std::string, Score> per_type;
};

/// Exact-match (type and boundaries) micro P/R/F1; spans are matched within
/// the sentence at the same position in both lists.
EvalReport entity_f1(std::span<const std::vector<EntitySpan>> gold,
                     std::span<const std::vector<EntitySpan>> pred);

/// Scores predicted tag sequences against the corpus's gold tags.
EvalReport evaluate_tags(const Corpus& gold, std::span<const std::vector<TagId>> predicted);
/// Viterbi-decodes per-sentence distributions, then scores them.
EvalReport evaluate_probs(const Corpus& gold, std::span<const Matrix> probs);

std::vector<std::vector<TagId>> decode_all(std::span<const Matrix> probs, const LabelSet& label_set);

// --- probe discriminator ----------------------------------------------------------

struct ProbeConfig {
  std::size_t epochs = 5;
  double lr = 1e-3;
  std::size_t hidden_dim = 64;
  std::size_t batch_tokens = 256;
  std::uint64_t seed = 0;
};

/// Trains a fresh discriminator (same architecture as the teacher's) on fixed
/// token features with 1 = source labels; returns token accuracy on the test set.
double probe_features(const Matrix& train_x, std::span<const double> train_y, const Matrix& test_x,
                      std::span<const double> test_y, const ProbeConfig& cfg);

/// Probe accuracy on the frozen encoder of `teacher`: trained on source/target
/// train tokens, evaluated on source/target test tokens.
double probe_discriminator(const Teacher& teacher, const Corpus& source_train, const Corpus& target_train,
                           const Corpus& source_test, const Corpus& target_test, const Vocabulary& vocab,
                           const ProbeConfig& cfg);

// --- Selected / Other split --------------------------------------------------------

struct SplitReport {
  EvalReport selected;
  EvalReport other;
  std::vector<std::int64_t> selected_ids;
  std::vector<std::int64_t> other_ids;
};

/// Partitions `test` by the top-rho rule over per-sentence l_scores (aligned
/// with test.sentences) and scores `probs` on each partition.
SplitReport split_eval(const Corpus& test, std::span<const double> l_scores, std::span<const Matrix> probs,
                       double rho);

/// Spearman rank correlation with average ranks for ties.
double rank_correlation(std::span<const double> x, std::span<const double> y);

}  // namespace advpicker
