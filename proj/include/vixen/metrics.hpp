#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vixen {

using Tokens = std::vector<std::string>;

/// Shared metric tokenizer: ASCII-lowercase, split on whitespace and ASCII
/// punctuation, punctuation dropped. Bytes >= 0x80 stay inside words.
Tokens metric_tokens(std::string_view text);

/// Porter (1980) stemmer for lowercase ASCII words; other input is returned as is.
std::string porter_stem(std::string_view word);

struct EvalPair {
  std::string id;
  std::string candidate;
  std::vector<std::string> references;
  std::optional<double> score;  // average correspondence score in [1, 5]
};

/// Throws ConfigError listing every malformed pair (no references, score out of range).
void validate_pairs(const std::vector<EvalPair>& pairs);

// --- BLEU-4 -----------------------------------------------------------------

struct BleuStats {
  std::array<std::size_t, 4> matches{};  // clipped n-gram matches
  std::array<std::size_t, 4> totals{};   // candidate n-grams
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;  // closest reference length, ties to the shorter
  double precision(std::size_t n) const;  // n in 1..4
  double brevity_penalty() const;
  /// In [0, 1]; zero when any precision is zero.
  double bleu() const;
};

/// Accumulates one candidate against its references into `stats`.
void add_bleu_stats(const Tokens& candidate, const std::vector<Tokens>& references, BleuStats& stats);

/// Corpus BLEU-4, x100, no smoothing.
double bleu4(const std::vector<EvalPair>& pairs);
/// Mean of per-sentence BLEU-4 with add-one smoothing for n >= 2, x100.
double bleu4_smoothed_sentence(const std::vector<EvalPair>& pairs);

// --- ROUGE-L ----------------------------------------------------------------

inline constexpr double kRougeBeta = 1.2;

std::size_t lcs_length(const Tokens& a, const Tokens& b);
/// Best F over the references, in [0, 1].
double rouge_l_pair(const Tokens& candidate, const std::vector<Tokens>& references);
/// Mean over pairs, x100.
double rouge_l(const std::vector<EvalPair>& pairs);

// --- METEOR-lite ------------------------------------------------------------

struct MeteorParams {
  double alpha = 0.9;
  double beta = 3.0;
  double gamma = 0.5;
};

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
  double precision = 0.0;
  double recall = 0.0;
  double fmean = 0.0;
  double penalty = 0.0;
  double score = 0.0;
};

// Unigram alignment, exact forms first, then Porter stems among the still
// unmatched tokens. Each candidate token, left to right, takes the next
// reference position when that continues the current chunk, otherwise the
// leftmost free matching position.
MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference, const MeteorParams& params = {});
/// Best score over the references, in [0, 1].
double meteor_pair(const Tokens& candidate, const std::vector<Tokens>& references, const MeteorParams& params = {});
/// Mean segment score, x100.
double meteor_lite(const std::vector<EvalPair>& pairs, const MeteorParams& params = {});

// --- CIDEr-D ----------------------------------------------------------------

// Document frequencies come from the reference sets of the corpus being
// scored (one document per pair). Per n: TF-IDF vectors with raw term
// counts and idf = log(N) - log(max(1, df)), clipped overlap
// sum min(c, r) * r / (|c| |r|), Gaussian length penalty with sigma = 6.
// Raw pair score = 10 * mean over n, averaged over references.
class CiderD {
 public:
  static constexpr double kSigma = 6.0;

  /// Throws ConfigError when fewer than two distinct reference documents exist.
  explicit CiderD(const std::vector<std::vector<Tokens>>& reference_documents);

  /// Raw score (perfect match on a well-conditioned corpus = 10).
  double score(const Tokens& candidate, const std::vector<Tokens>& references) const;
  /// Per-n values before averaging (penalty applied, without the x10).
  std::array<double, 4> per_n(const Tokens& candidate, const Tokens& reference) const;

  std::size_t documents() const noexcept { return n_docs_; }

 private:
  struct Vec {
    std::array<std::map<std::vector<std::string>, double>, 4> w;
    std::array<double, 4> norm{};
    std::size_t length = 0;
  };
  Vec vectorize(const Tokens& t) const;

  std::map<std::vector<std::string>, double> df_;
  double log_n_ = 0.0;
  std::size_t n_docs_ = 0;
};

/// Corpus CIDEr-D as reported: mean raw pair score x10.
double cider_d(const std::vector<EvalPair>& pairs);

}  // namespace vixen
