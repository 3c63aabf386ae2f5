#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace advpicker {

using TagId = int;

/// BIO tag inventory. Tag 0 is always "O"; type k maps to B = 2k+1, I = 2k+2.
class LabelSet {
 public:
  explicit LabelSet(std::vector<std::string> entity_types);

  /// PER, LOC, ORG, MISC.
  static LabelSet conll();

  const std::vector<std::string>& entity_types() const { return entity_types_; }
  const std::vector<std::string>& tags() const { return tags_; }
  std::size_t size() const { return tags_.size(); }

  std::optional<TagId> index(std::string_view tag) const;
  const std::string& tag(TagId id) const { return tags_.at(static_cast<std::size_t>(id)); }

  static constexpr TagId outside = 0;
  static bool is_begin(TagId t) { return t > 0 && t % 2 == 1; }
  static bool is_inside(TagId t) { return t > 0 && t % 2 == 0; }
  /// Entity type index of a B-/I- tag; -1 for O.
  static int type_of(TagId t) { return t == 0 ? -1 : (t - 1) / 2; }
  static TagId begin_tag(int type) { return 2 * type + 1; }
  static TagId inside_tag(int type) { return 2 * type + 2; }

  /// Whether tag `next` may follow `prev`; prev = nullopt means sentence start.
  static bool allowed(std::optional<TagId> prev, TagId next);

  bool operator==(const LabelSet& other) const { return entity_types_ == other.entity_types_; }

 private:
  std::vector<std::string> entity_types_;
  std::vector<std::string> tags_;
  std::unordered_map<std::string, TagId> index_;
};

enum class Language : std::uint8_t { source, target };
enum class Split : std::uint8_t { train, dev, test };

std::string_view to_string(Language lang);
std::string_view to_string(Split split);

struct Sentence {
  std::int64_t id = 0;
  std::vector<std::string> tokens;
  std::optional<std::vector<TagId>> gold_tags;
  Language language = Language::source;

  std::size_t size() const { return tokens.size(); }
};

struct Corpus {
  std::vector<Sentence> sentences;
  LabelSet label_set = LabelSet::conll();
  Split split = Split::train;

  std::size_t size() const { return sentences.size(); }
  /// Same sentences with gold tags removed.
  Corpus unlabeled() const;
};

bool validate_bio(std::span<const TagId> tags, const LabelSet& label_set);

/// Throws AlignmentError on duplicate ids or tag/token length mismatch, InvalidBIO otherwise.
void check_corpus(const Corpus& corpus);

Corpus read_conll(const std::filesystem::path& path, const LabelSet& label_set,
                  Language language = Language::source, Split split = Split::train);

/// Writes one "token tag" line per token; `tags` must align with the corpus.
void write_conll(const Corpus& corpus, std::span<const std::vector<TagId>> tags,
                 const std::filesystem::path& path);
/// Writes the corpus's own gold tags.
void write_conll(const Corpus& corpus, const std::filesystem::path& path);

/// Closed token vocabulary. Index 0 is reserved for unknown tokens.
class Vocabulary {
 public:
  static constexpr std::int32_t unk = 0;
  static constexpr std::string_view unk_token = "<unk>";

  Vocabulary();
  /// Collects tokens in first-occurrence order over the given corpora.
  static Vocabulary build(std::span<const Corpus* const> corpora);

  std::int32_t add(const std::string& token);
  std::int32_t lookup(const std::string& token) const;
  std::vector<std::int32_t> encode(const Sentence& sentence) const;
  std::size_t size() const { return tokens_.size(); }
  const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

// --- synthetic bilingual benchmark -----------------------------------------

/// Generative pattern for one entity type: names are shared by both languages,
/// trigger words precede the entity and come from the shared or the private
/// vocabulary like any other context token.
struct EntityTemplate {
  std::string type;
  std::size_t names = 40;
  std::size_t min_length = 1;
  std::size_t max_length = 3;
  std::size_t triggers = 6;
};

struct SynthSpec {
  std::size_t shared_vocab_size = 300;
  std::size_t private_vocab_size = 300;
  std::vector<EntityTemplate> entity_templates = {{"PER"}, {"LOC"}, {"ORG"}, {"MISC"}};
  /// Fraction of names of each type that also appear in the pool of another type.
  double ambiguous_name_fraction = 0.3;
  /// Probability that an entity is preceded by a trigger word.
  double trigger_rate = 0.9;
  double kappa = 0.3;
  /// Concentration of the per-sentence Beta draw around kappa; larger = less spread.
  double kappa_concentration = 2.0;
  std::size_t min_length = 6;
  std::size_t max_length = 16;
  std::size_t max_entities = 3;
  std::size_t sentences = 2000;
  std::uint64_t seed = 1;

  void validate() const;
  LabelSet label_set() const;
};

struct BilingualCorpus {
  Corpus source;
  Corpus target;
  /// Realized fraction of non-entity tokens drawn from the shared vocabulary,
  /// per sentence, aligned with `sentences`.
  std::vector<double> source_shared_fraction;
  std::vector<double> target_shared_fraction;
};

BilingualCorpus generate_bilingual(const SynthSpec& spec);

struct BenchmarkSizes {
  std::size_t train = 2000;
  std::size_t dev = 500;
  std::size_t test = 500;
};

struct Benchmark {
  BilingualCorpus train;
  BilingualCorpus dev;
  BilingualCorpus test;
};

/// Three independent draws of generate_bilingual with per-split seeds.
Benchmark generate_benchmark(const SynthSpec& spec, const BenchmarkSizes& sizes);

}  // namespace advpicker
