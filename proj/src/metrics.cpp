#include "vixen/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <climits>
#include <cmath>
#include <cstdint>
#include <set>

#include "vixen/error.hpp"

namespace vixen {

namespace {

bool is_separator(unsigned char c) {
  if (c >= 0x80) return false;
  return std::isspace(c) || std::ispunct(c) || std::iscntrl(c);
}

using Ngram = std::vector<std::string>;
using NgramCounts = std::map<Ngram, std::size_t>;

NgramCounts ngram_counts(const Tokens& t, std::size_t n) {
  NgramCounts out;
  if (t.size() < n) return out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Ngram(t.begin() + static_cast<std::ptrdiff_t>(i),
                                                              t.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

std::vector<Tokens> tokenize_all(const std::vector<std::string>& texts) {
  std::vector<Tokens> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(metric_tokens(t));
  return out;
}

void require_nonempty(const std::vector<EvalPair>& pairs, const char* what) {
  if (pairs.empty()) throw ConfigError({std::string(what) + ": empty corpus"});
  validate_pairs(pairs);
}

}  // namespace

Tokens metric_tokens(std::string_view text) {
  Tokens out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_separator(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

void validate_pairs(const std::vector<EvalPair>& pairs) {
  std::vector<std::string> problems;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    const std::string where = "pair " + std::to_string(i) + (p.id.empty() ? "" : " ('" + p.id + "')");
    if (p.references.empty()) problems.push_back(where + ": no references");
    if (p.score && !(*p.score >= 1.0 && *p.score <= 5.0)) {
      problems.push_back(where + ": correspondence score " + std::to_string(*p.score) + " outside [1, 5]");
    }
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

// --- BLEU -------------------------------------------------------------------

double BleuStats::precision(std::size_t n) const {
  const auto t = totals.at(n - 1);
  return t == 0 ? 0.0 : static_cast<double>(matches.at(n - 1)) / static_cast<double>(t);
}

double BleuStats::brevity_penalty() const {
  if (candidate_length == 0) return 0.0;
  if (candidate_length > reference_length) return 1.0;
  return std::exp(1.0 - static_cast<double>(reference_length) / static_cast<double>(candidate_length));
}

double BleuStats::bleu() const {
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const double p = precision(n);
    if (p == 0.0) return 0.0;
    log_sum += std::log(p);
  }
  return brevity_penalty() * std::exp(log_sum / 4.0);
}

void add_bleu_stats(const Tokens& candidate, const std::vector<Tokens>& references, BleuStats& stats) {
  for (std::size_t n = 1; n <= 4; ++n) {
    const NgramCounts cand = ngram_counts(candidate, n);
    NgramCounts max_ref;
    for (const auto& r : references) {
      for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
    }
    for (const auto& [g, c] : cand) {
      auto it = max_ref.find(g);
      if (it != max_ref.end()) stats.matches[n - 1] += std::min(c, it->second);
      stats.totals[n - 1] += c;
    }
  }
  std::size_t best = 0;
  std::size_t best_diff = SIZE_MAX;
  for (const auto& r : references) {
    const std::size_t len = r.size();
    const std::size_t diff = len > candidate.size() ? len - candidate.size() : candidate.size() - len;
    if (diff < best_diff || (diff == best_diff && len < best)) {
      best = len;
      best_diff = diff;
    }
  }
  stats.candidate_length += candidate.size();
  stats.reference_length += best;
}

double bleu4(const std::vector<EvalPair>& pairs) {
  require_nonempty(pairs, "bleu4");
  BleuStats stats;
  for (const auto& p : pairs) add_bleu_stats(metric_tokens(p.candidate), tokenize_all(p.references), stats);
  return 100.0 * stats.bleu();
}

double bleu4_smoothed_sentence(const std::vector<EvalPair>& pairs) {
  require_nonempty(pairs, "bleu4");
  double total = 0.0;
  for (const auto& p : pairs) {
    BleuStats s;
    add_bleu_stats(metric_tokens(p.candidate), tokenize_all(p.references), s);
    if (s.candidate_length == 0 || s.matches[0] == 0) continue;
    double log_sum = std::log(s.precision(1));
    for (std::size_t n = 2; n <= 4; ++n) {
      log_sum += std::log((static_cast<double>(s.matches[n - 1]) + 1.0) / (static_cast<double>(s.totals[n - 1]) + 1.0));
    }
    total += s.brevity_penalty() * std::exp(log_sum / 4.0);
  }
  return 100.0 * total / static_cast<double>(pairs.size());
}

// --- ROUGE-L ----------------------------------------------------------------

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l_pair(const Tokens& candidate, const std::vector<Tokens>& references) {
  double best = 0.0;
  for (const auto& r : references) {
    const std::size_t lcs = lcs_length(candidate, r);
    if (lcs == 0) continue;
    const double p = static_cast<double>(lcs) / static_cast<double>(candidate.size());
    const double rec = static_cast<double>(lcs) / static_cast<double>(r.size());
    const double b2 = kRougeBeta * kRougeBeta;
    best = std::max(best, (1.0 + b2) * p * rec / (rec + b2 * p));
  }
  return best;
}

double rouge_l(const std::vector<EvalPair>& pairs) {
  require_nonempty(pairs, "rouge_l");
  double total = 0.0;
  for (const auto& p : pairs) total += rouge_l_pair(metric_tokens(p.candidate), tokenize_all(p.references));
  return 100.0 * total / static_cast<double>(pairs.size());
}

// --- METEOR-lite ------------------------------------------------------------

MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference, const MeteorParams& params) {
  const std::size_t nc = candidate.size();
  const std::size_t nr = reference.size();
  constexpr std::size_t kNone = SIZE_MAX;
  std::vector<std::size_t> link(nc, kNone);  // candidate -> reference position
  std::vector<bool> taken(nr, false);

  auto stage = [&](const Tokens& c, const Tokens& r) {
    for (std::size_t i = 0; i < nc; ++i) {
      if (link[i] != kNone) continue;
      std::size_t pick = kNone;
      if (i > 0 && link[i - 1] != kNone) {
        const std::size_t next = link[i - 1] + 1;
        if (next < nr && !taken[next] && c[i] == r[next]) pick = next;
      }
      for (std::size_t j = 0; pick == kNone && j < nr; ++j) {
        if (!taken[j] && c[i] == r[j]) pick = j;
      }
      if (pick != kNone) {
        link[i] = pick;
        taken[pick] = true;
      }
    }
  };
  stage(candidate, reference);
  Tokens cs, rs;
  for (const auto& t : candidate) cs.push_back(porter_stem(t));
  for (const auto& t : reference) rs.push_back(porter_stem(t));
  stage(cs, rs);

  MeteorAlignment a;
  for (std::size_t i = 0; i < nc; ++i) {
    if (link[i] == kNone) continue;
    ++a.matches;
    const bool continues = i > 0 && link[i - 1] != kNone && link[i - 1] + 1 == link[i];
    if (!continues) ++a.chunks;
  }
  if (a.matches == 0) return a;
  const double m = static_cast<double>(a.matches);
  a.precision = m / static_cast<double>(nc);
  a.recall = m / static_cast<double>(nr);
  a.fmean = a.precision * a.recall / (params.alpha * a.precision + (1.0 - params.alpha) * a.recall);
  a.penalty = params.gamma * std::pow(static_cast<double>(a.chunks) / m, params.beta);
  a.score = a.fmean * (1.0 - a.penalty);
  return a;
}

double meteor_pair(const Tokens& candidate, const std::vector<Tokens>& references, const MeteorParams& params) {
  double best = 0.0;
  for (const auto& r : references) best = std::max(best, meteor_align(candidate, r, params).score);
  return best;
}

double meteor_lite(const std::vector<EvalPair>& pairs, const MeteorParams& params) {
  require_nonempty(pairs, "meteor_lite");
  double total = 0.0;
  for (const auto& p : pairs) total += meteor_pair(metric_tokens(p.candidate), tokenize_all(p.references), params);
  return 100.0 * total / static_cast<double>(pairs.size());
}

// --- CIDEr-D ----------------------------------------------------------------

CiderD::CiderD(const std::vector<std::vector<Tokens>>& reference_documents) {
  std::set<std::vector<Tokens>> distinct;
  for (const auto& doc : reference_documents) {
    std::vector<Tokens> sorted = doc;
    std::sort(sorted.begin(), sorted.end());
    distinct.insert(std::move(sorted));
    std::set<Ngram> present;
    for (const auto& ref : doc) {
      for (std::size_t n = 1; n <= 4; ++n) {
        for (const auto& [g, c] : ngram_counts(ref, n)) present.insert(g);
      }
    }
    for (const auto& g : present) df_[g] += 1.0;
  }
  if (distinct.size() < 2) {
    throw ConfigError({"cider_d: needs at least two distinct reference documents, got " +
                       std::to_string(distinct.size()) + " (IDF would be degenerate)"});
  }
  n_docs_ = reference_documents.size();
  log_n_ = std::log(static_cast<double>(n_docs_));
}

CiderD::Vec CiderD::vectorize(const Tokens& t) const {
  Vec v;
  v.length = t.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    double sq = 0.0;
    for (const auto& [g, c] : ngram_counts(t, n)) {
      auto it = df_.find(g);
      const double df = it == df_.end() ? 0.0 : it->second;
      const double w = static_cast<double>(c) * (log_n_ - std::log(std::max(1.0, df)));
      v.w[n - 1][g] = w;
      sq += w * w;
    }
    v.norm[n - 1] = std::sqrt(sq);
  }
  return v;
}

std::array<double, 4> CiderD::per_n(const Tokens& candidate, const Tokens& reference) const {
  const Vec c = vectorize(candidate);
  const Vec r = vectorize(reference);
  const double delta = static_cast<double>(c.length) - static_cast<double>(r.length);
  const double penalty = std::exp(-(delta * delta) / (2.0 * kSigma * kSigma));
  std::array<double, 4> out{};
  for (std::size_t n = 0; n < 4; ++n) {
    double val = 0.0;
    for (const auto& [g, w] : c.w[n]) {
      auto it = r.w[n].find(g);
      if (it != r.w[n].end()) val += std::min(w, it->second) * it->second;
    }
    if (c.norm[n] != 0.0 && r.norm[n] != 0.0) val /= c.norm[n] * r.norm[n];
    out[n] = val * penalty;
  }
  return out;
}

double CiderD::score(const Tokens& candidate, const std::vector<Tokens>& references) const {
  if (references.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : references) {
    const auto v = per_n(candidate, r);
    total += (v[0] + v[1] + v[2] + v[3]) / 4.0;
  }
  return 10.0 * total / static_cast<double>(references.size());
}

double cider_d(const std::vector<EvalPair>& pairs) {
  require_nonempty(pairs, "cider_d");
  std::vector<std::vector<Tokens>> docs;
  for (const auto& p : pairs) docs.push_back(tokenize_all(p.references));
  const CiderD scorer(docs);
  double total = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) total += scorer.score(metric_tokens(pairs[i].candidate), docs[i]);
  return 10.0 * total / static_cast<double>(pairs.size());
}

}  // namespace vixen
