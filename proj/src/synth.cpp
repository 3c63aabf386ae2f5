#include <algorithm>
#include <random>

#include "advpicker/corpus.hpp"
#include "advpicker/error.hpp"

namespace advpicker {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::size_t total_triggers(const SynthSpec& spec) {
  std::size_t n = 0;
  for (const auto& t : spec.entity_templates) n += t.triggers;
  return n;
}

class Generator {
 public:
  Generator(const SynthSpec& spec, std::uint64_t seed)
      : spec_(spec), label_set_(spec.label_set()), rng_(seed) {
    std::size_t offset = 0;
    for (const auto& t : spec_.entity_templates) {
      trigger_offset_.push_back(offset);
      offset += t.triggers;
    }
    filler_offset_ = offset;
    build_name_pools();
  }

  Corpus corpus(Language lang, std::size_t n, std::vector<double>& fractions) {
    Corpus c{.sentences = {}, .label_set = label_set_, .split = Split::train};
    c.sentences.reserve(n);
    fractions.clear();
    fractions.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      c.sentences.push_back(sentence(static_cast<std::int64_t>(i), lang, fractions));
    }
    return c;
  }

 private:
  struct Block {
    int type = -1;  // -1: a single filler token
    bool trigger = false;
    std::vector<std::string> names;
    std::size_t length() const { return type < 0 ? 1 : names.size() + (trigger ? 1 : 0); }
  };

  void build_name_pools() {
    const auto& templates = spec_.entity_templates;
    pools_.resize(templates.size());
    for (std::size_t k = 0; k < templates.size(); ++k) {
      std::string stem = templates[k].type;
      std::transform(stem.begin() + 1, stem.end(), stem.begin() + 1,
                     [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
      for (std::size_t j = 0; j < templates[k].names; ++j) pools_[k].push_back(stem + std::to_string(j));
    }
    if (templates.size() < 2) return;
    // Each pool also takes the first names of the next type's pool, so those
    // names belong to two types and only a trigger word tells them apart.
    const auto original = pools_;
    for (std::size_t k = 0; k < templates.size(); ++k) {
      const auto& donor = original[(k + 1) % templates.size()];
      auto m = static_cast<std::size_t>(spec_.ambiguous_name_fraction * static_cast<double>(donor.size()));
      m = std::min(m, donor.size());
      pools_[k].insert(pools_[k].end(), donor.begin(), donor.begin() + static_cast<std::ptrdiff_t>(m));
    }
  }

  double sentence_kappa() {
    const double kappa = spec_.kappa;
    if (kappa <= 0.0 || kappa >= 1.0) return kappa;
    std::gamma_distribution<double> ga(kappa * spec_.kappa_concentration, 1.0);
    std::gamma_distribution<double> gb((1.0 - kappa) * spec_.kappa_concentration, 1.0);
    const double a = ga(rng_);
    const double b = gb(rng_);
    return a + b > 0.0 ? a / (a + b) : kappa;
  }

  std::size_t uniform(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }

  /// Draws a context word; `trigger_type` < 0 picks filler.
  std::string context_word(Language lang, double kappa_s, int trigger_type, std::size_t& shared) {
    const bool use_shared = std::bernoulli_distribution(kappa_s)(rng_);
    const std::size_t vocab = use_shared ? spec_.shared_vocab_size : spec_.private_vocab_size;
    std::size_t idx;
    if (trigger_type >= 0) {
      const auto t = static_cast<std::size_t>(trigger_type);
      idx = trigger_offset_[t] + uniform(0, spec_.entity_templates[t].triggers - 1);
    } else {
      idx = filler_offset_ + uniform(0, vocab - filler_offset_ - 1);
    }
    if (use_shared) {
      ++shared;
      return "w" + std::to_string(idx);
    }
    return (lang == Language::source ? "s" : "t") + std::to_string(idx);
  }

  Sentence sentence(std::int64_t id, Language lang, std::vector<double>& fractions) {
    const std::size_t length = uniform(spec_.min_length, spec_.max_length);
    const double kappa_s = sentence_kappa();
    const auto num_types = spec_.entity_templates.size();

    std::vector<Block> blocks;
    std::size_t used = 0;
    const std::size_t entities = uniform(0, spec_.max_entities);
    for (std::size_t e = 0; e < entities; ++e) {
      Block b;
      b.type = static_cast<int>(uniform(0, num_types - 1));
      const auto& tmpl = spec_.entity_templates[static_cast<std::size_t>(b.type)];
      b.trigger = tmpl.triggers > 0 && std::bernoulli_distribution(spec_.trigger_rate)(rng_);
      const std::size_t n = uniform(tmpl.min_length, tmpl.max_length);
      const auto& pool = pools_[static_cast<std::size_t>(b.type)];
      for (std::size_t j = 0; j < n; ++j) b.names.push_back(pool[uniform(0, pool.size() - 1)]);
      // keep at least one filler token
      if (used + b.length() + 1 > length) break;
      used += b.length();
      blocks.push_back(std::move(b));
    }
    for (std::size_t j = used; j < length; ++j) blocks.push_back(Block{});
    std::shuffle(blocks.begin(), blocks.end(), rng_);

    Sentence s;
    s.id = id;
    s.language = lang;
    std::vector<TagId> tags;
    std::size_t shared = 0, context = 0;
    for (const auto& b : blocks) {
      if (b.type < 0) {
        s.tokens.push_back(context_word(lang, kappa_s, -1, shared));
        tags.push_back(LabelSet::outside);
        ++context;
        continue;
      }
      if (b.trigger) {
        s.tokens.push_back(context_word(lang, kappa_s, b.type, shared));
        tags.push_back(LabelSet::outside);
        ++context;
      }
      for (std::size_t j = 0; j < b.names.size(); ++j) {
        s.tokens.push_back(b.names[j]);
        tags.push_back(j == 0 ? LabelSet::begin_tag(b.type) : LabelSet::inside_tag(b.type));
      }
    }
    s.gold_tags = std::move(tags);
    fractions.push_back(context > 0 ? static_cast<double>(shared) / static_cast<double>(context) : 0.0);
    return s;
  }

  const SynthSpec& spec_;
  LabelSet label_set_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> trigger_offset_;
  std::size_t filler_offset_ = 0;
  std::vector<std::vector<std::string>> pools_;
};

}  // namespace

void SynthSpec::validate() const {
  if (!(kappa >= 0.0 && kappa <= 1.0)) throw ConfigError("synth.kappa must lie in [0, 1]");
  if (shared_vocab_size < 1 || private_vocab_size < 1) throw ConfigError("vocabulary sizes must be >= 1");
  if (entity_templates.empty()) throw ConfigError("at least one entity template is required");
  const std::size_t triggers = total_triggers(*this);
  if (shared_vocab_size <= triggers || private_vocab_size <= triggers) {
    throw ConfigError("vocabulary sizes must exceed the total trigger count (" + std::to_string(triggers) + ")");
  }
  for (const auto& t : entity_templates) {
    if (t.names == 0 || t.min_length == 0 || t.min_length > t.max_length) {
      throw ConfigError("invalid entity template for type " + t.type);
    }
  }
  if (min_length < 1 || min_length > max_length) throw ConfigError("invalid sentence length range");
  if (!(ambiguous_name_fraction >= 0.0 && ambiguous_name_fraction <= 1.0)) {
    throw ConfigError("synth.ambiguous_name_fraction must lie in [0, 1]");
  }
  if (!(trigger_rate >= 0.0 && trigger_rate <= 1.0)) throw ConfigError("synth.trigger_rate must lie in [0, 1]");
  if (!(kappa_concentration > 0.0)) throw ConfigError("synth.kappa_concentration must be positive");
}

LabelSet SynthSpec::label_set() const {
  std::vector<std::string> types;
  for (const auto& t : entity_templates) types.push_back(t.type);
  return LabelSet(std::move(types));
}

BilingualCorpus generate_bilingual(const SynthSpec& spec) {
  spec.validate();
  Generator gen(spec, splitmix64(spec.seed));
  BilingualCorpus out;
  out.source = gen.corpus(Language::source, spec.sentences, out.source_shared_fraction);
  out.target = gen.corpus(Language::target, spec.sentences, out.target_shared_fraction);
  return out;
}

Benchmark generate_benchmark(const SynthSpec& spec, const BenchmarkSizes& sizes) {
  auto draw = [&](std::size_t n, std::uint64_t salt, Split split) {
    SynthSpec s = spec;
    s.sentences = n;
    s.seed = splitmix64(spec.seed ^ (salt * 0x632be59bd9b4e019ULL));
    auto bc = generate_bilingual(s);
    bc.source.split = split;
    bc.target.split = split;
    return bc;
  };
  return Benchmark{draw(sizes.train, 1, Split::train), draw(sizes.dev, 2, Split::dev),
                   draw(sizes.test, 3, Split::test)};
}

}  // namespace advpicker
