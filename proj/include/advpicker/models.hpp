#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "advpicker/corpus.hpp"
#include "advpicker/tensor.hpp"

namespace advpicker {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 64;
  /// Context radius w: the mixing layer sees the mean embedding of the w
  /// tokens on each side, left and right kept apart.
  std::size_t window = 2;

  void validate() const;
};

struct DiscriminatorConfig {
  std::size_t hidden_dim = 64;
  void validate() const;
};

/// Concatenated token indices for a batch of sentences.
struct TokenBatch {
  std::vector<std::int32_t> tokens;
  std::vector<std::size_t> lengths;

  /// Encodes sentences with `vocab`; max_len = 0 keeps full length.
  static TokenBatch build(std::span<const Sentence* const> sentences, const Vocabulary& vocab,
                          std::size_t max_len = 0);
  static TokenBatch build(std::span<const Sentence> sentences, const Vocabulary& vocab,
                          std::size_t max_len = 0);
  std::size_t rows() const { return tokens.size(); }
};

/// Splits a stacked (sum of lengths) x k matrix back into per-sentence blocks.
std::vector<Matrix> split_rows(const Matrix& stacked, std::span<const std::size_t> lengths);

namespace components {
inline const std::string encoder = "encoder";
inline const std::string ner = "ner";
inline const std::string discriminator = "discriminator";
inline const std::string student = "student";
}  // namespace components

void init_encoder(ParamStore& store, const std::string& component, const EncoderConfig& cfg);
void init_ner_head(ParamStore& store, const std::string& component, std::size_t embed_dim,
                   std::size_t num_tags);
void init_discriminator(ParamStore& store, const std::string& component, std::size_t embed_dim,
                        const DiscriminatorConfig& cfg);

/// Per-token contextual features H (tokens x embed_dim):
/// h_i = relu(e_i Ws + mean(e_{i-w..i-1}) Wl + mean(e_{i+1..i+w}) Wr + b).
Tensor encode(const ParamStore& store, const std::string& component, const EncoderConfig& cfg,
              const TokenBatch& batch);
/// Row-wise softmax(H W + b) over the tag set.
Tensor ner_head(const ParamStore& store, const std::string& component, const Tensor& features);
/// Per-token probability that the feature comes from the source language:
/// sigmoid(relu(H W2 + b2) W1 + b1), tokens x 1. Biases start at zero.
Tensor discriminate(const ParamStore& store, const std::string& component, const Tensor& features);

/// Encoder + NER head + language discriminator trained adversarially.
struct Teacher {
  EncoderConfig encoder;
  DiscriminatorConfig discriminator;
  std::size_t num_tags = 0;
  ParamStore params;

  static Teacher create(const EncoderConfig& enc, const DiscriminatorConfig& dis, std::size_t num_tags,
                        std::uint64_t seed);

  Tensor encode(const TokenBatch& batch) const;
  Tensor ner(const Tensor& features) const;
  Tensor discriminate(const Tensor& features) const;

  void save(const std::filesystem::path& path, std::map<std::string, std::string> extra = {}) const;
  static Teacher load(const std::filesystem::path& path);
};

/// Target-language sequence labeler with the encoder + softmax head
/// architecture, in its own parameter store.
struct Student {
  EncoderConfig encoder;
  std::size_t num_tags = 0;
  ParamStore params;

  static Student create(const EncoderConfig& enc, std::size_t num_tags, std::uint64_t seed);

  void save(const std::filesystem::path& path, std::map<std::string, std::string> extra = {}) const;
  static Student load(const std::filesystem::path& path);
};

Tensor student_forward(const Student& student, const TokenBatch& batch);

/// Per-sentence tag distributions from a teacher's NER head.
std::vector<Matrix> predict_proba(const Teacher& teacher, std::span<const Sentence> sentences,
                                  const Vocabulary& vocab);
std::vector<Matrix> predict_proba(const Student& student, std::span<const Sentence> sentences,
                                  const Vocabulary& vocab);

}  // namespace advpicker
