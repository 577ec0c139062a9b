#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "metadetector/autodiff.hpp"

namespace metadet::text {

// Definition-1 label encoding.
enum class Label : int { kFake = 0, kReal = 1 };

struct Post {
  std::string id;
  std::string text;
  std::optional<Label> label;
  std::string event_id;
};

enum class CorpusRole { kSource, kTarget };

struct EventCorpus {
  std::string event_id;
  std::vector<Post> posts;
  CorpusRole role = CorpusRole::kSource;

  std::size_t size() const { return posts.size(); }
  // Non-empty and every post carries event_id. Throws DataError otherwise.
  void validate() const;
  bool fully_labeled() const;
  // Copy with every label removed.
  EventCorpus without_labels() const;
};

// Lowercases, splits on Unicode whitespace, strips leading/trailing
// punctuation and splits runs of CJK ideographs into single characters.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;

  Vocabulary();
  // Rebuilds from an ordered token list (ids follow list order; the list
  // must start with the PAD and UNK markers).
  static Vocabulary from_tokens(std::vector<std::string> tokens,
                                std::size_t min_count);

  std::int32_t id(const std::string& token) const;
  const std::string& token(std::int32_t id) const { return tokens_.at(id); }
  bool contains(const std::string& token) const {
    return index_.count(token) > 0;
  }
  std::size_t size() const { return tokens_.size(); }
  std::size_t min_count() const { return min_count_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  // FNV-1a over the ordered token list; identifies a vocabulary in
  // checkpoints.
  std::uint64_t hash() const;

 private:
  friend Vocabulary build_vocab(std::span<const EventCorpus* const>,
                                std::size_t);
  void append(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
  std::size_t min_count_ = 1;
};

inline const char* kPadToken = "<pad>";
inline const char* kUnkToken = "<unk>";

// Tokens with count >= min_count get ids by descending frequency, ties
// broken lexicographically.
Vocabulary build_vocab(std::span<const EventCorpus* const> corpora,
                       std::size_t min_count);

std::vector<std::int32_t> encode(std::span<const std::string> tokens,
                                 const Vocabulary& vocab, std::size_t k);
std::vector<std::int32_t> encode(const Post& post, const Vocabulary& vocab,
                                 std::size_t k);

// Encodes a whole corpus into one row-major [n×k] id buffer.
std::vector<std::int32_t> encode_corpus(const EventCorpus& corpus,
                                        const Vocabulary& vocab,
                                        std::size_t k);

// Smallest token count covering `quantile` of the posts, clamped to [4, 256].
std::size_t choose_k(std::span<const EventCorpus* const> corpora,
                     double quantile = 0.95);

struct EmbeddingTable {
  ad::Tensor matrix;  // [|V|×d]
  bool trainable = true;

  std::size_t vocab_size() const { return matrix.dim(0); }
  std::size_t dim() const { return matrix.dim(1); }
};

// uniform(−0.25/√d, 0.25/√d) per entry, PAD row zero.
EmbeddingTable random_embedding_table(std::size_t vocab_size, std::size_t dim,
                                      std::mt19937_64& rng);

// Pure lookup: column j of the result is the embedding of ids[j]. [d×k]
ad::Tensor embed(std::span<const std::int32_t> ids,
                 const EmbeddingTable& table);

// Reads the textual word-vector format ("N d" header then N lines of
// "token v1 .. vd"). Vocabulary tokens missing from the file fall back to
// the random initializer; PAD is forced to zero.
EmbeddingTable load_pretrained_vectors(const std::filesystem::path& path,
                                       const Vocabulary& vocab,
                                       std::mt19937_64& rng);

// Writes the format read by load_pretrained_vectors. values is row-major
// [tokens.size()×dim].
void write_word_vectors(const std::filesystem::path& path,
                        std::span<const std::string> tokens,
                        std::span<const double> values, std::size_t dim);

// JSON Lines corpus interchange: {"id", "text", "label": 0|1|null, "event"}.
EventCorpus read_corpus_jsonl(const std::filesystem::path& path,
                              CorpusRole role);
void write_corpus_jsonl(const std::filesystem::path& path,
                        const EventCorpus& corpus);

}  // namespace metadet::text
