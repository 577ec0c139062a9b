#include "metadetector/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "metadetector/errors.hpp"
#include "metadetector/random.hpp"

namespace metadet::synth {

namespace {

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

std::string post_id(const std::string& event, std::size_t i) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return event + "-" + buf;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

std::size_t pick(std::size_t lo, std::size_t hi, std::mt19937_64& rng) {
  return std::uniform_int_distribution<std::size_t>(lo, hi - 1)(rng);
}

std::vector<text::Label> exact_labels(std::size_t n, double fake_ratio,
                                      std::uint64_t seed) {
  const auto n_fake =
      static_cast<std::size_t>(std::llround(fake_ratio * static_cast<double>(n)));
  std::vector<text::Label> labels(n, text::Label::kReal);
  std::fill_n(labels.begin(), std::min(n_fake, n), text::Label::kFake);
  std::mt19937_64 rng(seed);
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

text::EventCorpus make_event(const SynthSpec& spec, const std::string& event,
                             std::size_t n, std::uint64_t stream,
                             double label_bias, text::CorpusRole role) {
  const std::uint64_t event_seed = derive_seed(spec.seed, stream);
  const auto labels = exact_labels(n, spec.fake_ratio, derive_seed(event_seed, 0));
  const std::size_t n_sig = spec.signal_vocab_size();
  const std::size_t n_neutral = spec.neutral_vocab_size();
  const std::size_t half = spec.specific_vocab_size / 2;

  text::EventCorpus corpus;
  corpus.event_id = event;
  corpus.role = role;
  corpus.posts.reserve(n);
  std::bernoulli_distribution from_specific(spec.shift);
  std::bernoulli_distribution has_signal(spec.signal_strength);
  std::bernoulli_distribution aligned(label_bias);
  for (std::size_t i = 0; i < n; ++i) {
    std::mt19937_64 rng(derive_seed(event_seed, i + 1));
    const bool fake = labels[i] == text::Label::kFake;
    std::vector<std::string> tokens(spec.post_length);
    for (auto& tok : tokens) {
      if (from_specific(rng)) {
        // Fake posts lean on the lower half of the block, real on the upper.
        const bool low = aligned(rng) == fake;
        const std::size_t j = low ? pick(0, half, rng)
                                  : pick(half, spec.specific_vocab_size, rng);
        tok = specific_token(event, j);
      } else {
        tok = "shared" + std::to_string(pick(0, n_neutral, rng));
      }
    }
    if (has_signal(rng)) {
      // Overwrite distinct positions so the post length never changes.
      std::vector<std::size_t> pos(spec.post_length);
      std::iota(pos.begin(), pos.end(), std::size_t{0});
      for (std::size_t s = 0; s < spec.signal_tokens; ++s) {
        std::swap(pos[s], pos[pick(s, spec.post_length, rng)]);
        tokens[pos[s]] = (fake ? "sigfake" : "sigreal") +
                         std::to_string(pick(0, n_sig, rng));
      }
    }
    corpus.posts.push_back({post_id(event, i), join(tokens), labels[i], event});
  }
  return corpus;
}

}  // namespace

std::size_t SynthSpec::signal_vocab_size() const {
  return std::max<std::size_t>(1, shared_vocab_size / 4);
}

std::size_t SynthSpec::neutral_vocab_size() const {
  return shared_vocab_size - 2 * signal_vocab_size();
}

void SynthSpec::validate() const {
  if (n_source == 0 || n_target == 0) {
    throw ConfigError("synth: n_source and n_target must be positive");
  }
  if (shared_vocab_size < 4) {
    throw ConfigError("synth: shared_vocab_size must be at least 4");
  }
  if (specific_vocab_size < 2) {
    throw ConfigError("synth: specific_vocab_size must be at least 2");
  }
  if (post_length == 0) throw ConfigError("synth: post_length must be positive");
  if (signal_tokens == 0 || signal_tokens > post_length) {
    throw ConfigError("synth: signal_tokens must lie in [1, post_length]");
  }
  if (!in_unit(shift)) throw ConfigError("synth: shift must lie in [0, 1]");
  if (!in_unit(signal_strength)) {
    throw ConfigError("synth: signal_strength must lie in [0, 1]");
  }
  if (!in_unit(fake_ratio)) throw ConfigError("synth: fake_ratio must lie in [0, 1]");
  if (!in_unit(source_label_bias)) {
    throw ConfigError("synth: source_label_bias must lie in [0, 1]");
  }
  if (vector_dim == 0) throw ConfigError("synth: vector_dim must be positive");
  if (!(vector_noise >= 0.0) || !(topic_offset >= 0.0)) {
    throw ConfigError("synth: vector_noise and topic_offset must be non-negative");
  }
  if (source_event.empty() || target_event.empty() ||
      source_event == target_event) {
    throw ConfigError("synth: event ids must be distinct and non-empty");
  }
}

std::string specific_token(const std::string& event_id, std::size_t i) {
  return event_id + "w" + std::to_string(i);
}

SynthPair generate(const SynthSpec& spec) {
  spec.validate();
  SynthPair out;
  out.source = make_event(spec, spec.source_event, spec.n_source, 1,
                          spec.source_label_bias, text::CorpusRole::kSource);
  out.target = make_event(spec, spec.target_event, spec.n_target, 2, 0.5,
                          text::CorpusRole::kTarget);
  return out;
}

std::vector<std::string> all_tokens(const SynthSpec& spec) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < spec.signal_vocab_size(); ++i) {
    out.push_back("sigreal" + std::to_string(i));
  }
  for (std::size_t i = 0; i < spec.signal_vocab_size(); ++i) {
    out.push_back("sigfake" + std::to_string(i));
  }
  for (std::size_t i = 0; i < spec.neutral_vocab_size(); ++i) {
    out.push_back("shared" + std::to_string(i));
  }
  for (const auto* event : {&spec.source_event, &spec.target_event}) {
    for (std::size_t i = 0; i < spec.specific_vocab_size; ++i) {
      out.push_back(specific_token(*event, i));
    }
  }
  return out;
}

WordVectors topic_vectors(const SynthSpec& spec) {
  spec.validate();
  WordVectors wv;
  wv.tokens = all_tokens(spec);
  wv.dim = spec.vector_dim;
  const std::size_t d = wv.dim;
  std::mt19937_64 rng(derive_seed(spec.seed, 3));
  std::normal_distribution<double> gauss(0.0, 1.0);

  auto centre = [&] {
    std::vector<double> c(d);
    double norm = 0.0;
    for (auto& v : c) {
      v = gauss(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : c) v *= spec.topic_offset / norm;
    return c;
  };
  const auto c_src = centre();
  const auto c_tgt = centre();
  const std::string src_prefix = spec.source_event + "w";
  const std::string tgt_prefix = spec.target_event + "w";

  const double sd = spec.vector_noise / std::sqrt(static_cast<double>(d));
  wv.values.resize(wv.tokens.size() * d);
  for (std::size_t i = 0; i < wv.tokens.size(); ++i) {
    const std::string& t = wv.tokens[i];
    const std::vector<double>* c = nullptr;
    if (t.rfind(src_prefix, 0) == 0) c = &c_src;
    else if (t.rfind(tgt_prefix, 0) == 0) c = &c_tgt;
    for (std::size_t j = 0; j < d; ++j) {
      wv.values[i * d + j] = sd * gauss(rng) + (c ? (*c)[j] : 0.0);
    }
  }
  return wv;
}

double shared_bayes_accuracy(const SynthSpec& spec) {
  const double s = spec.signal_strength;
  return s + (1.0 - s) * std::max(spec.fake_ratio, 1.0 - spec.fake_ratio);
}

AnomalyInjection inject_anomalies(const text::EventCorpus& corpus,
                                  double fraction, std::uint64_t seed,
                                  const SynthSpec& spec) {
  if (!(fraction >= 0.0 && fraction <= 0.5)) {
    throw ConfigError("inject_anomalies: fraction must lie in [0, 0.5]");
  }
  if (spec.post_length == 0 || spec.specific_vocab_size == 0) {
    throw ConfigError("inject_anomalies: empty post length or vocabulary");
  }
  AnomalyInjection out{corpus, {}};
  const std::size_t n = corpus.size();
  const auto count = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(n)));
  if (count == 0) return out;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, 0));
  std::shuffle(order.begin(), order.end(), rng);
  out.replaced.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(out.replaced.begin(), out.replaced.end());

  std::bernoulli_distribution coin(0.5);
  for (const std::size_t i : out.replaced) {
    std::mt19937_64 post_rng(derive_seed(seed, i + 1));
    text::Post& p = out.corpus.posts[i];
    std::vector<std::string> tokens(spec.post_length);
    for (auto& tok : tokens) {
      tok = specific_token(p.event_id, pick(0, spec.specific_vocab_size, post_rng));
    }
    p.text = join(tokens);
    p.label = coin(post_rng) ? text::Label::kFake : text::Label::kReal;
  }
  return out;
}

}  // namespace metadet::synth
