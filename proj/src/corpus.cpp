#include "advpicker/corpus.hpp"

#include <fstream>
#include <sstream>
#include <unordered_set>

#include "advpicker/error.hpp"

namespace advpicker {

LabelSet::LabelSet(std::vector<std::string> entity_types) : entity_types_(std::move(entity_types)) {
  if (entity_types_.empty()) throw ConfigError("label set needs at least one entity type");
  tags_.reserve(2 * entity_types_.size() + 1);
  tags_.push_back("O");
  for (const auto& type : entity_types_) {
    tags_.push_back("B-" + type);
    tags_.push_back("I-" + type);
  }
  for (std::size_t i = 0; i < tags_.size(); ++i) {
    if (!index_.emplace(tags_[i], static_cast<TagId>(i)).second) {
      throw ConfigError("duplicate entity type in label set: " + tags_[i]);
    }
  }
}

LabelSet LabelSet::conll() { return LabelSet({"PER", "LOC", "ORG", "MISC"}); }

std::optional<TagId> LabelSet::index(std::string_view tag) const {
  auto it = index_.find(std::string(tag));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool LabelSet::allowed(std::optional<TagId> prev, TagId next) {
  if (!is_inside(next)) return true;
  if (!prev || *prev == outside) return false;
  return type_of(*prev) == type_of(next);
}

std::string_view to_string(Language lang) { return lang == Language::source ? "source" : "target"; }

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "train";
}

Corpus Corpus::unlabeled() const {
  Corpus out = *this;
  for (auto& s : out.sentences) s.gold_tags.reset();
  return out;
}

bool validate_bio(std::span<const TagId> tags, const LabelSet& label_set) {
  std::optional<TagId> prev;
  for (TagId t : tags) {
    if (t < 0 || static_cast<std::size_t>(t) >= label_set.size()) return false;
    if (!LabelSet::allowed(prev, t)) return false;
    prev = t;
  }
  return true;
}

void check_corpus(const Corpus& corpus) {
  std::unordered_set<std::int64_t> ids;
  for (const auto& s : corpus.sentences) {
    if (!ids.insert(s.id).second) {
      throw AlignmentError("duplicate sentence id " + std::to_string(s.id));
    }
    if (!s.gold_tags) continue;
    if (s.gold_tags->size() != s.tokens.size()) {
      throw AlignmentError("sentence " + std::to_string(s.id) + ": tag count differs from token count");
    }
    if (!validate_bio(*s.gold_tags, corpus.label_set)) {
      throw InvalidBIO("sentence " + std::to_string(s.id) + " violates the BIO scheme");
    }
  }
}

namespace {

bool is_blank(const std::string& line) {
  return line.find_first_not_of(" \t\r") == std::string::npos;
}

}  // namespace

Corpus read_conll(const std::filesystem::path& path, const LabelSet& label_set, Language language,
                  Split split) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot open " + path.string());

  Corpus corpus{.sentences = {}, .label_set = label_set, .split = split};
  Sentence current;
  std::vector<TagId> tags;
  std::optional<TagId> prev;
  std::int64_t next_id = 0;

  auto flush = [&] {
    if (current.tokens.empty()) return;
    current.id = next_id++;
    current.language = language;
    current.gold_tags = std::move(tags);
    corpus.sentences.push_back(std::move(current));
    current = Sentence{};
    tags.clear();
    prev.reset();
  };

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (is_blank(line)) {
      flush();
      continue;
    }
    if (line.rfind("-DOCSTART-", 0) == 0) continue;

    std::istringstream fields(line);
    std::string token, tag, extra;
    if (!(fields >> token >> tag) || (fields >> extra)) {
      throw FormatError(lineno, "expected 2 columns: token and tag");
    }
    auto id = label_set.index(tag);
    if (!id) throw FormatError(lineno, "unknown tag '" + tag + "'");
    if (!LabelSet::allowed(prev, *id)) {
      throw FormatError(lineno, "invalid BIO transition to '" + tag + "'");
    }
    current.tokens.push_back(std::move(token));
    tags.push_back(*id);
    prev = *id;
  }
  flush();
  return corpus;
}

void write_conll(const Corpus& corpus, std::span<const std::vector<TagId>> tags,
                 const std::filesystem::path& path) {
  if (tags.size() != corpus.sentences.size()) {
    throw AlignmentError("write_conll: " + std::to_string(tags.size()) + " tag sequences for " +
                         std::to_string(corpus.sentences.size()) + " sentences");
  }
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i].size() != corpus.sentences[i].tokens.size()) {
      throw AlignmentError("write_conll: sentence " + std::to_string(corpus.sentences[i].id) +
                           " has " + std::to_string(corpus.sentences[i].tokens.size()) +
                           " tokens but " + std::to_string(tags[i].size()) + " tags");
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOError("cannot write " + path.string());
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (i > 0) out << '\n';
    const auto& s = corpus.sentences[i];
    for (std::size_t j = 0; j < s.tokens.size(); ++j) {
      out << s.tokens[j] << ' ' << corpus.label_set.tag(tags[i][j]) << '\n';
    }
  }
  if (!out) throw IOError("write failed: " + path.string());
}

void write_conll(const Corpus& corpus, const std::filesystem::path& path) {
  std::vector<std::vector<TagId>> tags;
  tags.reserve(corpus.sentences.size());
  for (const auto& s : corpus.sentences) {
    if (!s.gold_tags) throw AlignmentError("sentence " + std::to_string(s.id) + " has no gold tags");
    tags.push_back(*s.gold_tags);
  }
  write_conll(corpus, tags, path);
}

Vocabulary::Vocabulary() { add(std::string(unk_token)); }

Vocabulary Vocabulary::build(std::span<const Corpus* const> corpora) {
  Vocabulary vocab;
  for (const Corpus* c : corpora) {
    for (const auto& s : c->sentences) {
      for (const auto& tok : s.tokens) vocab.add(tok);
    }
  }
  return vocab;
}

std::int32_t Vocabulary::add(const std::string& token) {
  auto [it, inserted] = index_.emplace(token, static_cast<std::int32_t>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::int32_t Vocabulary::lookup(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? unk : it->second;
}

std::vector<std::int32_t> Vocabulary::encode(const Sentence& sentence) const {
  std::vector<std::int32_t> ids;
  ids.reserve(sentence.tokens.size());
  for (const auto& tok : sentence.tokens) ids.push_back(lookup(tok));
  return ids;
}

}  // namespace advpicker
