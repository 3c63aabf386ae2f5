#pragma once

#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "advpicker/corpus.hpp"
#include "advpicker/models.hpp"

namespace advpicker {

/// How token-level source probabilities become a sentence-level probability.
enum class Pooling { mean, max, first_token };

Pooling parse_pooling(std::string_view name);
std::string_view to_string(Pooling pooling);

/// Raw teacher output on one target sentence.
struct TeacherOutput {
  std::int64_t id = 0;
  Matrix soft_labels;        // tokens x tags, row-stochastic
  Vector token_source_prob;  // per-token discriminator output
};

/// Runs the teacher's NER head and discriminator over every sentence.
std::vector<TeacherOutput> pseudo_label(const Teacher& teacher, const Corpus& target, const Vocabulary& vocab);

double sentence_source_prob(std::span<const double> token_probs, Pooling pooling = Pooling::mean);
double sentence_source_prob(const Vector& token_probs, Pooling pooling = Pooling::mean);

/// 1 - |p - 0.5|: 1 when the discriminator is maximally unsure, 0.5 when certain.
double l_score(double source_prob);

/// Sum over tokens of the highest label probability.
double confidence_sum(const Matrix& soft_labels);

struct PseudoLabeledSentence {
  Sentence sentence;  // target tokens, never gold tags
  Matrix soft_labels;
  double source_prob = 0.5;
  double l_score = 1.0;
  double confidence_sum = 0.0;
  std::size_t seed_index = 0;  // which teacher's output won the merge
};

/// For each sentence keeps the teacher output with the largest confidence sum
/// (ties: lowest seed index); the sentence's source probability comes from the
/// same winning teacher. `per_seed[k]` must align with `target.sentences`.
std::vector<PseudoLabeledSentence> merge_seeds(std::span<const std::vector<TeacherOutput>> per_seed,
                                               const Corpus& target, Pooling pooling = Pooling::mean);

struct ScoredSentence {
  std::int64_t id = 0;
  double l_score = 0.0;
};

/// Ids of the first ceil(rho * n) items after a stable sort by
/// (l_score desc, id asc). Throws EmptyInput on no items, ConfigError on bad rho.
std::vector<std::int64_t> select_top_rho_ids(std::span<const ScoredSentence> items, double rho);

struct SelectionResult {
  std::vector<PseudoLabeledSentence> selected;
  std::vector<PseudoLabeledSentence> rejected;
  double rho = 0.8;
};

SelectionResult select_top_rho(std::vector<PseudoLabeledSentence> items, double rho = 0.8);

// --- manifest and soft-label store -------------------------------------------------

struct ManifestRecord {
  std::int64_t id = 0;
  double source_prob = 0.0;
  double l_score = 0.0;
  bool selected = false;
  std::uint64_t seed = 0;
  double confidence_sum = 0.0;
};

/// One JSON object per line, in the order of `records`.
void write_manifest(std::span<const ManifestRecord> records, const std::filesystem::path& path);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

/// Binary container of id -> soft label matrix.
void write_soft_labels(std::span<const PseudoLabeledSentence> items, const std::filesystem::path& path);
std::map<std::int64_t, Matrix> read_soft_labels(const std::filesystem::path& path);

/// Manifest rows for a finished selection, ordered by sentence id.
std::vector<ManifestRecord> manifest_records(const SelectionResult& result, std::span<const std::uint64_t> seeds);

/// Rebuilds pseudo-labeled sentences from a manifest, its soft-label store and
/// the target corpus (gold tags stripped).
SelectionResult load_selection(std::span<const ManifestRecord> records, const std::map<std::int64_t, Matrix>& soft,
                               const Corpus& target, double rho);

}  // namespace advpicker
