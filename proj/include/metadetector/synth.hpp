#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "metadetector/text.hpp"

namespace metadet::synth {

// Two-event bag-of-tokens generator. Vocabulary partitions (all disjoint):
//   shared-signal-real  "sigreal<i>"
//   shared-signal-fake  "sigfake<i>"
//   shared-neutral      "shared<i>"
//   event-specific      "<event>w<i>", one block per event
struct SynthSpec {
  std::size_t n_source = 1000;
  std::size_t n_target = 1000;
  std::size_t shared_vocab_size = 60;
  std::size_t specific_vocab_size = 40;
  double shift = 0.5;            // P(token comes from the event's own block)
  double signal_strength = 0.8;  // P(post carries label-bearing tokens)
  std::size_t signal_tokens = 1;  // label-bearing tokens in such a post
  double fake_ratio = 0.5;
  std::size_t post_length = 16;
  std::uint64_t seed = 0;
  // Source event only: P(an event-specific token is drawn from the half of
  // the block aligned with the post's label). 0.5 keeps them label-free; the
  // target's event-specific tokens are always label-free.
  double source_label_bias = 0.5;

  // Companion word vectors: every token gets noise of norm ≈ vector_noise;
  // each event's specific tokens also sit around their own topic centre at
  // distance topic_offset from the origin.
  std::size_t vector_dim = 32;
  double vector_noise = 1.0;
  double topic_offset = 1.0;

  std::string source_event = "event1";
  std::string target_event = "event2";

  void validate() const;
  std::size_t signal_vocab_size() const;  // per class
  std::size_t neutral_vocab_size() const;
};

struct SynthPair {
  text::EventCorpus source;
  text::EventCorpus target;  // labeled; strip labels before training
};

SynthPair generate(const SynthSpec& spec);

struct WordVectors {
  std::vector<std::string> tokens;
  std::vector<double> values;  // row-major [tokens×dim]
  std::size_t dim = 0;
};

// Every token the generator can emit, in a fixed order.
std::vector<std::string> all_tokens(const SynthSpec& spec);
WordVectors topic_vectors(const SynthSpec& spec);

// Accuracy of the Bayes rule that only reads shared tokens:
// s + (1 − s)·max(fake_ratio, 1 − fake_ratio).
double shared_bayes_accuracy(const SynthSpec& spec);

std::string specific_token(const std::string& event_id, std::size_t i);

struct AnomalyInjection {
  text::EventCorpus corpus;
  std::vector<std::size_t> replaced;  // ascending post indices
};

// Replaces round(fraction·n) posts with pure event-specific noise posts
// (tokens uniform over the corpus event's block, label a fair coin). Post ids
// are kept.
AnomalyInjection inject_anomalies(const text::EventCorpus& corpus,
                                  double fraction, std::uint64_t seed,
                                  const SynthSpec& spec = SynthSpec{});

}  // namespace metadet::synth
