#include "advpicker/models.hpp"

#include "advpicker/error.hpp"

namespace advpicker {

void EncoderConfig::validate() const {
  if (vocab_size < 1) throw ConfigError("encoder vocab_size must be >= 1");
  if (embed_dim < 1) throw ConfigError("encoder embed_dim must be >= 1");
}

void DiscriminatorConfig::validate() const {
  if (hidden_dim < 1) throw ConfigError("discriminator hidden_dim must be >= 1");
}

TokenBatch TokenBatch::build(std::span<const Sentence* const> sentences, const Vocabulary& vocab,
                             std::size_t max_len) {
  TokenBatch batch;
  for (const Sentence* s : sentences) {
    const std::size_t n = max_len > 0 ? std::min(max_len, s->size()) : s->size();
    for (std::size_t i = 0; i < n; ++i) batch.tokens.push_back(vocab.lookup(s->tokens[i]));
    batch.lengths.push_back(n);
  }
  return batch;
}

TokenBatch TokenBatch::build(std::span<const Sentence> sentences, const Vocabulary& vocab,
                             std::size_t max_len) {
  std::vector<const Sentence*> ptrs;
  ptrs.reserve(sentences.size());
  for (const auto& s : sentences) ptrs.push_back(&s);
  return build(ptrs, vocab, max_len);
}

std::vector<Matrix> split_rows(const Matrix& stacked, std::span<const std::size_t> lengths) {
  std::vector<Matrix> out;
  out.reserve(lengths.size());
  Eigen::Index start = 0;
  for (auto len : lengths) {
    const auto n = static_cast<Eigen::Index>(len);
    if (start + n > stacked.rows()) throw ShapeError("split_rows: lengths exceed stacked rows");
    out.emplace_back(stacked.middleRows(start, n));
    start += n;
  }
  if (start != stacked.rows()) throw ShapeError("split_rows: lengths do not cover stacked rows");
  return out;
}

void init_encoder(ParamStore& store, const std::string& component, const EncoderConfig& cfg) {
  cfg.validate();
  const auto v = static_cast<Eigen::Index>(cfg.vocab_size);
  const auto d = static_cast<Eigen::Index>(cfg.embed_dim);
  store.add_uniform(component, "embed", v, d);
  store.add_uniform(component, "w_self", d, d);
  store.add_uniform(component, "w_left", d, d);
  store.add_uniform(component, "w_right", d, d);
  store.add_zeros(component, "b_hidden", 1, d);
}

void init_ner_head(ParamStore& store, const std::string& component, std::size_t embed_dim,
                   std::size_t num_tags) {
  store.add_uniform(component, "w_out", static_cast<Eigen::Index>(embed_dim),
                    static_cast<Eigen::Index>(num_tags));
  store.add_zeros(component, "b_out", 1, static_cast<Eigen::Index>(num_tags));
}

void init_discriminator(ParamStore& store, const std::string& component, std::size_t embed_dim,
                        const DiscriminatorConfig& cfg) {
  cfg.validate();
  store.add_uniform(component, "w_hidden", static_cast<Eigen::Index>(embed_dim),
                    static_cast<Eigen::Index>(cfg.hidden_dim));
  store.add_zeros(component, "b_hidden", 1, static_cast<Eigen::Index>(cfg.hidden_dim));
  store.add_uniform(component, "w_out", static_cast<Eigen::Index>(cfg.hidden_dim), 1);
  store.add_zeros(component, "b_out", 1, 1);
}

Tensor encode(const ParamStore& store, const std::string& component, const EncoderConfig& cfg,
              const TokenBatch& batch) {
  const auto& embed = store.get(component, "embed");
  for (auto idx : batch.tokens) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= cfg.vocab_size) {
      throw IndexError("encode: token index " + std::to_string(idx) + " outside vocabulary of size " +
                       std::to_string(cfg.vocab_size));
    }
  }
  const int w = static_cast<int>(cfg.window);
  Tensor e = gather_rows(embed, batch.tokens);
  Tensor left = window_mean(e, batch.lengths, -w, -1);
  Tensor right = window_mean(e, batch.lengths, 1, w);
  Tensor mixed = add(add(matmul(e, store.get(component, "w_self")), matmul(left, store.get(component, "w_left"))),
                     matmul(right, store.get(component, "w_right")));
  return relu(add_bias(mixed, store.get(component, "b_hidden")));
}

Tensor ner_head(const ParamStore& store, const std::string& component, const Tensor& features) {
  const auto& w = store.get(component, "w_out");
  if (features.cols() != w.rows()) {
    throw ShapeError("ner_head: features " + features.shape_string() + " vs weights " + w.shape_string());
  }
  return softmax(add_bias(matmul(features, w), store.get(component, "b_out")));
}

Tensor discriminate(const ParamStore& store, const std::string& component, const Tensor& features) {
  const auto& w_hidden = store.get(component, "w_hidden");
  if (features.cols() != w_hidden.rows()) {
    throw ShapeError("discriminate: features " + features.shape_string() + " vs weights " +
                     w_hidden.shape_string());
  }
  Tensor hidden = relu(add_bias(matmul(features, w_hidden), store.get(component, "b_hidden")));
  return sigmoid(add_bias(matmul(hidden, store.get(component, "w_out")), store.get(component, "b_out")));
}

// --- Teacher / Student ------------------------------------------------------------

namespace {

std::map<std::string, std::string> encoder_metadata(const EncoderConfig& enc, std::size_t num_tags) {
  return {{"vocab_size", std::to_string(enc.vocab_size)},
          {"embed_dim", std::to_string(enc.embed_dim)},
          {"window", std::to_string(enc.window)},
          {"num_tags", std::to_string(num_tags)}};
}

std::size_t meta_size(const std::map<std::string, std::string>& meta, const std::string& key,
                      const std::filesystem::path& path) {
  auto it = meta.find(key);
  if (it == meta.end()) throw IOError("checkpoint " + path.string() + " lacks '" + key + "'");
  return static_cast<std::size_t>(std::stoull(it->second));
}

void require_kind(const std::map<std::string, std::string>& meta, const std::string& kind,
                  const std::filesystem::path& path) {
  auto it = meta.find("kind");
  if (it == meta.end() || it->second != kind) {
    throw IOError("checkpoint " + path.string() + " is not a " + kind + " checkpoint");
  }
}

}  // namespace

Teacher Teacher::create(const EncoderConfig& enc, const DiscriminatorConfig& dis, std::size_t num_tags,
                        std::uint64_t seed) {
  Teacher t{enc, dis, num_tags, ParamStore(seed)};
  init_encoder(t.params, components::encoder, enc);
  init_ner_head(t.params, components::ner, enc.embed_dim, num_tags);
  init_discriminator(t.params, components::discriminator, enc.embed_dim, dis);
  return t;
}

Tensor Teacher::encode(const TokenBatch& batch) const {
  return advpicker::encode(params, components::encoder, encoder, batch);
}

Tensor Teacher::ner(const Tensor& features) const { return ner_head(params, components::ner, features); }

Tensor Teacher::discriminate(const Tensor& features) const {
  return advpicker::discriminate(params, components::discriminator, features);
}

void Teacher::save(const std::filesystem::path& path, std::map<std::string, std::string> extra) const {
  auto meta = encoder_metadata(encoder, num_tags);
  meta["kind"] = "teacher";
  meta["hidden_dim"] = std::to_string(discriminator.hidden_dim);
  meta.merge(extra);
  save_checkpoint(params, meta, path);
}

Teacher Teacher::load(const std::filesystem::path& path) {
  auto ck = load_checkpoint(path);
  require_kind(ck.metadata, "teacher", path);
  Teacher t;
  t.encoder = {meta_size(ck.metadata, "vocab_size", path), meta_size(ck.metadata, "embed_dim", path),
               meta_size(ck.metadata, "window", path)};
  t.discriminator.hidden_dim = meta_size(ck.metadata, "hidden_dim", path);
  t.num_tags = meta_size(ck.metadata, "num_tags", path);
  t.params = std::move(ck.params);
  return t;
}

Student Student::create(const EncoderConfig& enc, std::size_t num_tags, std::uint64_t seed) {
  Student s{enc, num_tags, ParamStore(seed)};
  init_encoder(s.params, components::student, enc);
  init_ner_head(s.params, components::student, enc.embed_dim, num_tags);
  return s;
}

void Student::save(const std::filesystem::path& path, std::map<std::string, std::string> extra) const {
  auto meta = encoder_metadata(encoder, num_tags);
  meta["kind"] = "student";
  meta.merge(extra);
  save_checkpoint(params, meta, path);
}

Student Student::load(const std::filesystem::path& path) {
  auto ck = load_checkpoint(path);
  require_kind(ck.metadata, "student", path);
  Student s;
  s.encoder = {meta_size(ck.metadata, "vocab_size", path), meta_size(ck.metadata, "embed_dim", path),
               meta_size(ck.metadata, "window", path)};
  s.num_tags = meta_size(ck.metadata, "num_tags", path);
  s.params = std::move(ck.params);
  return s;
}

Tensor student_forward(const Student& student, const TokenBatch& batch) {
  Tensor h = encode(student.params, components::student, student.encoder, batch);
  return ner_head(student.params, components::student, h);
}

std::vector<Matrix> predict_proba(const Teacher& teacher, std::span<const Sentence> sentences,
                                  const Vocabulary& vocab) {
  auto batch = TokenBatch::build(sentences, vocab);
  if (batch.rows() == 0) return std::vector<Matrix>(sentences.size());
  Tensor p = teacher.ner(teacher.encode(batch));
  return split_rows(p.value(), batch.lengths);
}

std::vector<Matrix> predict_proba(const Student& student, std::span<const Sentence> sentences,
                                  const Vocabulary& vocab) {
  auto batch = TokenBatch::build(sentences, vocab);
  if (batch.rows() == 0) return std::vector<Matrix>(sentences.size());
  return split_rows(student_forward(student, batch).value(), batch.lengths);
}

}  // namespace advpicker
