#include "metadetector/text.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "metadetector/errors.hpp"

namespace metadet::text {

namespace {

// Decodes one UTF-8 code point starting at text[pos]; invalid bytes decode
// as themselves (Latin-1) so tokenization never fails.
char32_t decode_utf8(std::string_view text, std::size_t& pos) {
  const auto b0 = static_cast<unsigned char>(text[pos]);
  auto cont = [&](std::size_t i) -> int {
    if (pos + i >= text.size()) return -1;
    const auto b = static_cast<unsigned char>(text[pos + i]);
    return (b & 0xC0) == 0x80 ? (b & 0x3F) : -1;
  };
  if (b0 < 0x80) {
    pos += 1;
    return b0;
  }
  if ((b0 & 0xE0) == 0xC0) {
    const int c1 = cont(1);
    if (c1 >= 0) {
      pos += 2;
      return (char32_t(b0 & 0x1F) << 6) | char32_t(c1);
    }
  } else if ((b0 & 0xF0) == 0xE0) {
    const int c1 = cont(1), c2 = cont(2);
    if (c1 >= 0 && c2 >= 0) {
      pos += 3;
      return (char32_t(b0 & 0x0F) << 12) | (char32_t(c1) << 6) | char32_t(c2);
    }
  } else if ((b0 & 0xF8) == 0xF0) {
    const int c1 = cont(1), c2 = cont(2), c3 = cont(3);
    if (c1 >= 0 && c2 >= 0 && c3 >= 0) {
      pos += 4;
      return (char32_t(b0 & 0x07) << 18) | (char32_t(c1) << 12) |
             (char32_t(c2) << 6) | char32_t(c3);
    }
  }
  pos += 1;
  return b0;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

bool is_space(char32_t c) {
  return c == ' ' || (c >= 0x09 && c <= 0x0D) || c == 0x85 || c == 0xA0 ||
         c == 0x1680 || (c >= 0x2000 && c <= 0x200A) || c == 0x2028 ||
         c == 0x2029 || c == 0x202F || c == 0x205F || c == 0x3000;
}

bool is_punct(char32_t c) {
  if (c < 0x80) {
    return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) ||
           (c >= 0x5B && c <= 0x60) || (c >= 0x7B && c <= 0x7E);
  }
  return c == 0xA1 || c == 0xA7 || c == 0xAB || c == 0xB6 || c == 0xB7 ||
         c == 0xBB || c == 0xBF || (c >= 0x2010 && c <= 0x2027) ||
         (c >= 0x2030 && c <= 0x205E) || (c >= 0x3001 && c <= 0x303F) ||
         (c >= 0xFF01 && c <= 0xFF0F) || (c >= 0xFF1A && c <= 0xFF20) ||
         (c >= 0xFF3B && c <= 0xFF40) || (c >= 0xFF5B && c <= 0xFF65);
}

bool is_cjk(char32_t c) {
  return (c >= 0x4E00 && c <= 0x9FFF) || (c >= 0x3400 && c <= 0x4DBF) ||
         (c >= 0xF900 && c <= 0xFAFF) || (c >= 0x3040 && c <= 0x30FF) ||
         (c >= 0x20000 && c <= 0x2EBEF);
}

void flush_segment(std::vector<char32_t>& seg, std::vector<std::string>& out) {
  std::size_t b = 0, e = seg.size();
  while (b < e && is_punct(seg[b])) ++b;
  while (e > b && is_punct(seg[e - 1])) --e;
  if (b < e) {
    std::string tok;
    for (std::size_t i = b; i < e; ++i) append_utf8(tok, seg[i]);
    out.push_back(std::move(tok));
  }
  seg.clear();
}

std::vector<std::size_t> token_counts(
    std::span<const EventCorpus* const> corpora) {
  std::vector<std::size_t> lengths;
  for (const EventCorpus* c : corpora) {
    for (const Post& p : c->posts) lengths.push_back(tokenize(p.text).size());
  }
  return lengths;
}

}  // namespace

void EventCorpus::validate() const {
  if (posts.empty()) {
    throw DataError("corpus for event '" + event_id + "' is empty");
  }
  for (const Post& p : posts) {
    if (p.event_id != event_id) {
      throw DataError("post '" + p.id + "' belongs to event '" + p.event_id +
                      "', expected '" + event_id + "'");
    }
  }
}

bool EventCorpus::fully_labeled() const {
  return std::all_of(posts.begin(), posts.end(),
                     [](const Post& p) { return p.label.has_value(); });
}

EventCorpus EventCorpus::without_labels() const {
  EventCorpus out = *this;
  for (Post& p : out.posts) p.label.reset();
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::vector<char32_t> seg;
  std::size_t pos = 0;
  while (pos < text.size()) {
    char32_t c = decode_utf8(text, pos);
    if (c >= 'A' && c <= 'Z') c = c - 'A' + 'a';
    if (is_space(c)) {
      flush_segment(seg, out);
    } else if (is_cjk(c)) {
      flush_segment(seg, out);
      seg.push_back(c);
      flush_segment(seg, out);
    } else {
      seg.push_back(c);
    }
  }
  flush_segment(seg, out);
  return out;
}

Vocabulary::Vocabulary() {
  append(kPadToken);
  append(kUnkToken);
}

void Vocabulary::append(const std::string& token) {
  index_.emplace(token, static_cast<std::int32_t>(tokens_.size()));
  tokens_.push_back(token);
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens,
                                   std::size_t min_count) {
  if (tokens.size() < 2 || tokens[0] != kPadToken || tokens[1] != kUnkToken) {
    throw DataError("vocabulary must start with the PAD and UNK markers");
  }
  Vocabulary v;
  v.min_count_ = min_count;
  for (std::size_t i = 2; i < tokens.size(); ++i) {
    if (v.contains(tokens[i])) {
      throw DataError("duplicate vocabulary token '" + tokens[i] + "'");
    }
    v.append(tokens[i]);
  }
  return v;
}

std::int32_t Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 14695981039346656037ull;
  for (const std::string& t : tokens_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 1099511628211ull;
    }
    h ^= 0xFF;
    h *= 1099511628211ull;
  }
  return h;
}

Vocabulary build_vocab(std::span<const EventCorpus* const> corpora,
                       std::size_t min_count) {
  if (min_count < 1) throw ConfigError("min_count must be >= 1");
  std::size_t n_posts = 0;
  std::map<std::string, std::size_t> counts;
  for (const EventCorpus* c : corpora) {
    n_posts += c->posts.size();
    for (const Post& p : c->posts) {
      for (std::string& t : tokenize(p.text)) ++counts[std::move(t)];
    }
  }
  if (n_posts == 0) throw DataError("cannot build a vocabulary from no posts");
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts) {
    if (n >= min_count) kept.emplace_back(tok, n);
  }
  // std::map iteration is already lexicographic; stable sort keeps that
  // order among equal counts.
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second > b.second;
  });
  Vocabulary v;
  v.min_count_ = min_count;
  for (auto& [tok, n] : kept) v.append(tok);
  return v;
}

std::vector<std::int32_t> encode(std::span<const std::string> tokens,
                                 const Vocabulary& vocab, std::size_t k) {
  if (k < 1) throw ConfigError("sequence length k must be >= 1");
  std::vector<std::int32_t> ids(k, Vocabulary::kPad);
  const std::size_t n = std::min(k, tokens.size());
  for (std::size_t i = 0; i < n; ++i) ids[i] = vocab.id(tokens[i]);
  return ids;
}

std::vector<std::int32_t> encode(const Post& post, const Vocabulary& vocab,
                                 std::size_t k) {
  const auto tokens = tokenize(post.text);
  return encode(tokens, vocab, k);
}

std::vector<std::int32_t> encode_corpus(const EventCorpus& corpus,
                                        const Vocabulary& vocab,
                                        std::size_t k) {
  std::vector<std::int32_t> ids;
  ids.reserve(corpus.size() * k);
  for (const Post& p : corpus.posts) {
    const auto row = encode(p, vocab, k);
    ids.insert(ids.end(), row.begin(), row.end());
  }
  return ids;
}

std::size_t choose_k(std::span<const EventCorpus* const> corpora,
                     double quantile) {
  if (!(quantile > 0.0 && quantile <= 1.0)) {
    throw ConfigError("quantile must lie in (0, 1]");
  }
  auto lengths = token_counts(corpora);
  if (lengths.empty()) throw DataError("choose_k: no posts");
  std::sort(lengths.begin(), lengths.end());
  // Nearest rank: the smallest L with |{len <= L}| >= q·n.
  auto rank = static_cast<std::size_t>(
      std::ceil(quantile * static_cast<double>(lengths.size()) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, lengths.size());
  return std::clamp<std::size_t>(lengths[rank - 1], 4, 256);
}

EmbeddingTable random_embedding_table(std::size_t vocab_size, std::size_t dim,
                                      std::mt19937_64& rng) {
  if (vocab_size < 2 || dim < 1) {
    throw ConfigError("embedding table needs |V| >= 2 and d >= 1");
  }
  const double a = 0.25 / std::sqrt(static_cast<double>(dim));
  std::uniform_real_distribution<double> unif(-a, a);
  EmbeddingTable table{ad::Tensor({vocab_size, dim}), true};
  for (std::size_t r = 1; r < vocab_size; ++r) {
    for (std::size_t i = 0; i < dim; ++i) table.matrix[r * dim + i] = unif(rng);
  }
  return table;
}

ad::Tensor embed(std::span<const std::int32_t> ids,
                 const EmbeddingTable& table) {
  const std::size_t d = table.dim(), k = ids.size();
  ad::Tensor out({d, k});
  for (std::size_t j = 0; j < k; ++j) {
    if (ids[j] < 0 || static_cast<std::size_t>(ids[j]) >= table.vocab_size()) {
      throw DataError("token id " + std::to_string(ids[j]) +
                      " outside embedding table of " +
                      std::to_string(table.vocab_size()) + " rows");
    }
    for (std::size_t i = 0; i < d; ++i) {
      out[i * k + j] = table.matrix[ids[j] * d + i];
    }
  }
  return out;
}

EmbeddingTable load_pretrained_vectors(const std::filesystem::path& path,
                                       const Vocabulary& vocab,
                                       std::mt19937_64& rng) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open word vectors '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing header", 1);
  std::istringstream header(line);
  long long n = -1, d = -1;
  std::string extra;
  if (!(header >> n >> d) || (header >> extra) || n < 0 || d < 1) {
    throw ParseError("header must be \"N d\"", 1);
  }
  EmbeddingTable table = random_embedding_table(
      vocab.size(), static_cast<std::size_t>(d), rng);
  const auto dim = static_cast<std::size_t>(d);
  std::vector<double> row(dim);
  for (long long i = 0; i < n; ++i) {
    const std::size_t lineno = static_cast<std::size_t>(i) + 2;
    if (!std::getline(in, line)) {
      throw ParseError("expected " + std::to_string(n) + " vectors, file ends",
                       lineno);
    }
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token)) throw ParseError("empty vector line", lineno);
    std::size_t got = 0;
    double v = 0.0;
    while (ls >> v) {
      if (got < dim) row[got] = v;
      ++got;
    }
    if (!ls.eof()) throw ParseError("non-numeric vector component", lineno);
    if (got != dim) {
      throw ParseError("vector for '" + token + "' has " +
                           std::to_string(got) + " values, header says " +
                           std::to_string(dim),
                       lineno);
    }
    if (!vocab.contains(token)) continue;
    const std::int32_t id = vocab.id(token);
    if (id == Vocabulary::kPad) continue;
    std::copy(row.begin(), row.end(),
              table.matrix.values().begin() + id * dim);
  }
  return table;
}

void write_word_vectors(const std::filesystem::path& path,
                        std::span<const std::string> tokens,
                        std::span<const double> values, std::size_t dim) {
  if (dim == 0 || values.size() != tokens.size() * dim) {
    throw DimensionError("word vectors: " + std::to_string(values.size()) +
                         " values for " + std::to_string(tokens.size()) +
                         " tokens of dimension " + std::to_string(dim));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << tokens.size() << ' ' << dim << '\n';
  char buf[32];
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    out << tokens[i];
    for (std::size_t j = 0; j < dim; ++j) {
      std::snprintf(buf, sizeof buf, " %.17g", values[i * dim + j]);
      out << buf;
    }
    out << '\n';
  }
}

EventCorpus read_corpus_jsonl(const std::filesystem::path& path,
                              CorpusRole role) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open corpus '" + path.string() + "'");
  EventCorpus corpus;
  corpus.role = role;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(path.string() + ": " + e.what(), lineno);
    }
    if (!j.is_object() || !j.contains("id") || !j.contains("text") ||
        !j.contains("event") || !j["text"].is_string() ||
        !j["event"].is_string()) {
      throw ParseError(path.string() + ": post needs id, text and event",
                       lineno);
    }
    Post p;
    p.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    p.text = j["text"].get<std::string>();
    p.event_id = j["event"].get<std::string>();
    if (j.contains("label") && !j["label"].is_null()) {
      const auto& l = j["label"];
      if (!l.is_number_integer() || (l.get<int>() != 0 && l.get<int>() != 1)) {
        throw ParseError(path.string() + ": label must be 0, 1 or null",
                         lineno);
      }
      p.label = static_cast<Label>(l.get<int>());
    }
    if (corpus.posts.empty()) corpus.event_id = p.event_id;
    corpus.posts.push_back(std::move(p));
  }
  corpus.validate();
  return corpus;
}

void write_corpus_jsonl(const std::filesystem::path& path,
                        const EventCorpus& corpus) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write corpus '" + path.string() + "'");
  for (const Post& p : corpus.posts) {
    nlohmann::ordered_json j;
    j["id"] = p.id;
    j["text"] = p.text;
    if (p.label) {
      j["label"] = static_cast<int>(*p.label);
    } else {
      j["label"] = nullptr;
    }
    j["event"] = p.event_id;
    out << j.dump() << '\n';
  }
}

}  // namespace metadet::text
