#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vixen/dataset.hpp"
#include "vixen/embedding.hpp"
#include "vixen/metrics.hpp"

namespace vixen {

/// Metric values x100 for one set of pairs. Missing when the set is empty,
/// and CIDEr-D is missing when the set has fewer than two distinct reference documents.
struct MetricValues {
  std::size_t count = 0;
  std::optional<double> semantic;
  std::optional<double> bleu4;
  std::optional<double> cider_d;
  std::optional<double> meteor;
  std::optional<double> rouge_l;
};

struct SubsetReport {
  double threshold = 0.0;
  MetricValues values;
};

struct MetricReport {
  std::string embedder;
  bool smoothed_bleu = false;
  MetricValues all;
  std::vector<SubsetReport> subsets;  // ascending thresholds

  nlohmann::ordered_json to_json() const;
  /// Header plus one row per set: subset,threshold,count,semantic,bleu4,cider_d,meteor,rouge_l.
  std::string to_csv() const;
};

struct EvaluateOptions {
  /// Empty disables threshold mode.
  std::vector<double> thresholds = {3.0, 4.0, 5.0};
  bool smoothed_bleu = false;
  /// Defaults to the hashed bag-of-words embedder.
  const SentenceEmbedder* embedder = nullptr;
};

/// Indices of pairs with score >= threshold.
std::vector<std::size_t> threshold_subset(const std::vector<EvalPair>& pairs, double threshold);

/// Per pair: the best cosine over its references, floored at 0; mean x100.
double semantic_similarity_score(const std::vector<EvalPair>& pairs, const SentenceEmbedder& embedder);

MetricValues evaluate_values(const std::vector<EvalPair>& pairs, const EvaluateOptions& options);

/// Scores the corpus and every threshold subset. Threshold mode on pairs
/// without scores is a ConfigError.
MetricReport evaluate_corpus(const std::vector<EvalPair>& pairs, const EvaluateOptions& options = {});

struct Prediction {
  std::string id;
  std::string candidate;
};

/// JSON lines with "id" and "candidate"; every problem is reported together.
std::vector<Prediction> parse_predictions(std::string_view text);
std::vector<Prediction> load_predictions(const std::filesystem::path& path);
void save_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions);

/// Joins predictions to manifest records by id; the record's change_summary
/// is the reference. Missing, duplicate or unmatched ids are errors.
std::vector<EvalPair> join_predictions(const std::vector<Prediction>& predictions,
                                       const std::vector<ImagePairRecord>& records);

}  // namespace vixen
