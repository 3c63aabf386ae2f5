#include "advpicker/adversarial.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "advpicker/error.hpp"
#include "advpicker/evaluation.hpp"

namespace advpicker {

void AdvConfig::validate() const {
  if (batch_size < 1) throw ConfigError("adv.batch_size must be >= 1");
  if (!(lr_ner > 0.0)) throw ConfigError("adv.lr_ner must be positive");
  if (!(lr_adv >= 0.0)) throw ConfigError("adv.lr_adv must be non-negative");
  if (!(weight_decay >= 0.0)) throw ConfigError("adv.weight_decay must be non-negative");
}

Tensor loss_ner(const Tensor& probs, std::span<const int> tags) { return nll(probs, tags); }

Tensor loss_dis(const Tensor& source_prob, std::span<const double> language) { return bce(source_prob, language); }

Tensor loss_enc(const Tensor& source_prob, std::span<const double> flipped_language) {
  return bce(source_prob, flipped_language);
}

std::vector<std::string> updated_components(SubStep step) {
  switch (step) {
    case SubStep::ner: return {components::encoder, components::ner};
    case SubStep::encoder: return {components::encoder};
    case SubStep::discriminator: return {components::discriminator};
  }
  return {};
}

namespace {

bool component_equal(const ParamStore& a, const ParamStore& b, const std::string& comp) {
  const auto& ca = a.component(comp);
  const auto& cb = b.component(comp);
  for (const auto& [name, t] : ca) {
    const auto& other = cb.at(name).value();
    if (t.value().size() != other.size()) return false;
    if (!std::equal(t.value().data(), t.value().data() + t.value().size(), other.data())) return false;
  }
  return true;
}

std::size_t count_violations(const ParamStore& before, const ParamStore& after, SubStep step) {
  const auto declared = updated_components(step);
  std::size_t violations = 0;
  for (const auto& comp : before.components()) {
    const bool changed = !component_equal(before, after, comp);
    const bool allowed = std::find(declared.begin(), declared.end(), comp) != declared.end();
    if (changed != allowed) ++violations;
  }
  return violations;
}

/// Draws `count` indices cycling through a permutation.
class Cursor {
 public:
  explicit Cursor(std::vector<std::size_t> order) : order_(std::move(order)) {}
  std::vector<std::size_t> take(std::size_t count) {
    std::vector<std::size_t> out;
    if (order_.empty()) return out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      out.push_back(order_[pos_]);
      pos_ = (pos_ + 1) % order_.size();
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

std::vector<std::size_t> permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

/// Target sentences resampled to `size` entries: whole shuffled passes, the
/// last one cut short.
std::vector<std::size_t> size_matched_pool(std::size_t target_size, std::size_t size, std::mt19937_64& rng) {
  std::vector<std::size_t> pool;
  if (target_size == 0) return pool;
  pool.reserve(size);
  while (pool.size() < size) {
    auto p = permutation(target_size, rng);
    const std::size_t take = std::min(p.size(), size - pool.size());
    pool.insert(pool.end(), p.begin(), p.begin() + static_cast<std::ptrdiff_t>(take));
  }
  return pool;
}

struct LanguageBatch {
  TokenBatch tokens;
  std::vector<double> language;  // per token, 1 = source
};

LanguageBatch language_batch(const Corpus& source, std::span<const std::size_t> src_idx, const Corpus& target,
                             std::span<const std::size_t> tgt_idx, const Vocabulary& vocab, std::size_t max_len) {
  std::vector<const Sentence*> sentences;
  for (auto i : src_idx) sentences.push_back(&source.sentences[i]);
  for (auto i : tgt_idx) sentences.push_back(&target.sentences[i]);
  LanguageBatch b{TokenBatch::build(sentences, vocab, max_len), {}};
  for (std::size_t k = 0; k < sentences.size(); ++k) {
    const double lang = k < src_idx.size() ? 1.0 : 0.0;
    b.language.insert(b.language.end(), b.tokens.lengths[k], lang);
  }
  return b;
}

}  // namespace

TeacherReport train_teacher(Teacher& teacher, const Corpus& source, const Corpus& target_unlabeled,
                            const Corpus& target_dev, const Vocabulary& vocab, const AdvConfig& cfg,
                            const TeacherHooks& hooks) {
  cfg.validate();
  if (source.sentences.empty()) throw EmptyInput("train_teacher: empty source corpus");
  for (const auto& s : source.sentences) {
    if (!s.gold_tags) throw ConfigError("train_teacher: source sentence " + std::to_string(s.id) + " has no tags");
  }
  const bool adversarial = cfg.lr_adv > 0.0 && !target_unlabeled.sentences.empty();

  AdamW opt_ner({components::encoder, components::ner}, {.lr = cfg.lr_ner, .weight_decay = cfg.weight_decay});
  AdamW opt_enc({components::encoder}, {.lr = cfg.lr_adv, .weight_decay = cfg.weight_decay});
  AdamW opt_dis({components::discriminator}, {.lr = cfg.lr_adv, .weight_decay = cfg.weight_decay});

  std::mt19937_64 rng(cfg.seed ^ 0x2545f4914f6cdd1dULL);
  const std::size_t n_src = source.sentences.size();
  const std::size_t batches = (n_src + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t half = (cfg.batch_size + 1) / 2;

  TeacherReport report;
  ParamStore best = teacher.params;
  ParamStore before;
  const bool snapshot = hooks.check_purity || static_cast<bool>(hooks.on_substep);

  auto run_substep = [&](SubStep step, auto&& body) {
    if (snapshot) before = teacher.params;
    body();
    if (!snapshot) return;
    ++report.substeps_checked;
    if (hooks.check_purity) report.purity_violations += count_violations(before, teacher.params, step);
    if (hooks.on_substep) hooks.on_substep(step, before, teacher.params);
  };

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // one seeded shuffle of source for the NER batches; the mixed-language
    // batch of each step is shared by the encoder and discriminator sub-steps
    Cursor ner_cursor(permutation(n_src, rng));
    Cursor mix_src(permutation(n_src, rng));
    Cursor mix_tgt(size_matched_pool(target_unlabeled.sentences.size(), n_src, rng));

    double sum_ner = 0.0, sum_enc = 0.0, sum_dis = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t count = std::min(cfg.batch_size, n_src - b * cfg.batch_size);

      run_substep(SubStep::ner, [&] {
        teacher.params.zero_grad();
        std::vector<const Sentence*> sentences;
        std::vector<int> tags;
        for (auto i : ner_cursor.take(count)) sentences.push_back(&source.sentences[i]);
        auto batch = TokenBatch::build(sentences, vocab, cfg.max_len);
        for (std::size_t k = 0; k < sentences.size(); ++k) {
          const auto& g = *sentences[k]->gold_tags;
          tags.insert(tags.end(), g.begin(), g.begin() + static_cast<std::ptrdiff_t>(batch.lengths[k]));
        }
        FreezeGuard freeze(teacher.params, {components::discriminator});
        Tensor loss = loss_ner(teacher.ner(teacher.encode(batch)), tags);
        backward(loss);
        opt_ner.step(teacher.params);
        sum_ner += loss.item();
      });

      if (!adversarial) continue;

      const auto src = mix_src.take(half);
      const auto tgt = mix_tgt.take(half);
      const auto mixed = language_batch(source, src, target_unlabeled, tgt, vocab, cfg.max_len);

      run_substep(SubStep::encoder, [&] {
        teacher.params.zero_grad();
        std::vector<double> flipped(mixed.language.size());
        std::transform(mixed.language.begin(), mixed.language.end(), flipped.begin(), [](double y) { return 1.0 - y; });
        FreezeGuard freeze(teacher.params, {components::ner, components::discriminator});
        Tensor loss = loss_enc(teacher.discriminate(teacher.encode(mixed.tokens)), flipped);
        backward(loss);
        opt_enc.step(teacher.params);
        sum_enc += loss.item();
      });

      run_substep(SubStep::discriminator, [&] {
        teacher.params.zero_grad();
        FreezeGuard freeze(teacher.params, {components::encoder, components::ner});
        Tensor loss = loss_dis(teacher.discriminate(teacher.encode(mixed.tokens)), mixed.language);
        backward(loss);
        opt_dis.step(teacher.params);
        sum_dis += loss.item();
      });
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.loss_ner = sum_ner / static_cast<double>(batches);
    if (adversarial) {
      m.loss_enc = sum_enc / static_cast<double>(batches);
      m.loss_dis = sum_dis / static_cast<double>(batches);
    }
    if (!target_dev.sentences.empty()) {
      m.dev_f1 = evaluate_probs(target_dev, predict_proba(teacher, target_dev.sentences, vocab)).f1;
    }
    if (hooks.probe) m.probe_accuracy = hooks.probe(teacher);
    // strict improvement keeps the earliest best epoch; with no dev set the last epoch wins
    if (target_dev.sentences.empty() || m.dev_f1 > report.best_dev_f1) {
      report.best_dev_f1 = m.dev_f1;
      report.best_epoch = epoch;
      best = teacher.params;
    }
    report.epochs.push_back(m);
    if (hooks.on_epoch) hooks.on_epoch(m);
  }
  if (cfg.epochs > 0) teacher.params = std::move(best);
  return report;
}

}  // namespace advpicker
