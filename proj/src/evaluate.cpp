#include "vixen/evaluate.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "vixen/binary_io.hpp"
#include "vixen/error.hpp"

namespace vixen {

using json = nlohmann::ordered_json;

std::vector<std::size_t> threshold_subset(const std::vector<EvalPair>& pairs, double threshold) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].score && *pairs[i].score >= threshold) out.push_back(i);
  }
  return out;
}

double semantic_similarity_score(const std::vector<EvalPair>& pairs, const SentenceEmbedder& embedder) {
  if (pairs.empty()) throw ConfigError({"semantic similarity: empty corpus"});
  double total = 0.0;
  for (const auto& p : pairs) {
    double best = 0.0;
    for (const auto& r : p.references) best = std::max(best, semantic_similarity(p.candidate, r, embedder));
    total += best;
  }
  return 100.0 * total / static_cast<double>(pairs.size());
}

MetricValues evaluate_values(const std::vector<EvalPair>& pairs, const EvaluateOptions& options) {
  MetricValues v;
  v.count = pairs.size();
  if (pairs.empty()) return v;
  const HashedBowEmbedder fallback;
  const SentenceEmbedder& emb = options.embedder ? *options.embedder : fallback;
  v.semantic = semantic_similarity_score(pairs, emb);
  v.bleu4 = options.smoothed_bleu ? bleu4_smoothed_sentence(pairs) : bleu4(pairs);
  try {
    v.cider_d = cider_d(pairs);
  } catch (const ConfigError&) {
    v.cider_d.reset();
  }
  v.meteor = meteor_lite(pairs);
  v.rouge_l = rouge_l(pairs);
  return v;
}

MetricReport evaluate_corpus(const std::vector<EvalPair>& pairs, const EvaluateOptions& options) {
  if (pairs.empty()) throw ConfigError({"evaluate: empty corpus"});
  validate_pairs(pairs);
  std::vector<double> thresholds = options.thresholds;
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  if (!thresholds.empty()) {
    std::vector<std::string> unscored;
    for (const auto& p : pairs) {
      if (!p.score && unscored.size() < 10) unscored.push_back("pair '" + p.id + "' has no correspondence score");
    }
    if (!unscored.empty()) {
      unscored.insert(unscored.begin(), "threshold mode needs a score on every pair (disable thresholds to skip)");
      throw ConfigError(std::move(unscored));
    }
  }

  MetricReport report;
  const HashedBowEmbedder fallback;
  report.embedder = options.embedder ? options.embedder->name() : fallback.name();
  report.smoothed_bleu = options.smoothed_bleu;
  report.all = evaluate_values(pairs, options);
  for (double t : thresholds) {
    std::vector<EvalPair> subset;
    for (std::size_t i : threshold_subset(pairs, t)) subset.push_back(pairs[i]);
    report.subsets.push_back({t, evaluate_values(subset, options)});
  }
  return report;
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json values_json(const MetricValues& v) {
  return json{{"count", v.count},          {"semantic_similarity", opt(v.semantic)},
              {"bleu4", opt(v.bleu4)},     {"cider_d", opt(v.cider_d)},
              {"meteor", opt(v.meteor)},   {"rouge_l", opt(v.rouge_l)}};
}

std::string csv_value(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream s;
  s.precision(17);
  s << *v;
  return s.str();
}

std::string threshold_label(double t) {
  std::ostringstream s;
  s << t;
  return s.str();
}

}  // namespace

json MetricReport::to_json() const {
  json j;
  j["scaling"] = {
      {"all", "every metric is multiplied by 100"},
      {"bleu4", smoothed_bleu ? "mean sentence BLEU-4, add-one smoothing for n >= 2" : "corpus BLEU-4, no smoothing"},
      {"cider_d", "per-n clipped TF-IDF cosine with Gaussian length penalty (sigma 6), mean over n x10, averaged over "
                  "references, corpus mean x10; document frequencies from the scored set's references"},
      {"meteor", "exact then Porter-stem unigram matching, alpha 0.9, beta 3, gamma 0.5, mean of segment scores"},
      {"rouge_l", "LCS F-measure with beta 1.2, best over references"},
      {"semantic_similarity", "cosine of sentence embeddings, best over references, floored at 0"},
      {"subset", "pairs with average correspondence score >= threshold"}};
  j["embedder"] = embedder;
  j["all"] = values_json(all);
  json subs = json::array();
  for (const auto& s : subsets) {
    json o = values_json(s.values);
    o["threshold"] = s.threshold;
    subs.push_back(o);
  }
  j["subsets"] = subs;
  return j;
}

std::string MetricReport::to_csv() const {
  std::ostringstream out;
  out << "subset,threshold,count,semantic,bleu4,cider_d,meteor,rouge_l\n";
  auto row = [&](const std::string& name, const std::string& t, const MetricValues& v) {
    out << name << ',' << t << ',' << v.count << ',' << csv_value(v.semantic) << ',' << csv_value(v.bleu4) << ','
        << csv_value(v.cider_d) << ',' << csv_value(v.meteor) << ',' << csv_value(v.rouge_l) << '\n';
  };
  row("all", "", all);
  for (const auto& s : subsets) row("@" + threshold_label(s.threshold), threshold_label(s.threshold), s.values);
  return out.str();
}

std::vector<Prediction> parse_predictions(std::string_view text) {
  std::vector<Prediction> out;
  std::vector<std::string> problems;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const std::string where = "predictions line " + std::to_string(line_no) + ": ";
    try {
      const json j = json::parse(line);
      if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("candidate") ||
          !j["candidate"].is_string()) {
        problems.push_back(where + "needs string fields 'id' and 'candidate'");
        continue;
      }
      out.push_back({j["id"].get<std::string>(), j["candidate"].get<std::string>()});
    } catch (const json::parse_error& e) {
      problems.push_back(where + "malformed JSON: " + e.what());
    }
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return out;
}

std::vector<Prediction> load_predictions(const std::filesystem::path& path) { return parse_predictions(read_file(path)); }

void save_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions) {
  std::string out;
  for (const auto& p : predictions) out += json{{"id", p.id}, {"candidate", p.candidate}}.dump() + "\n";
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, out);
}

std::vector<EvalPair> join_predictions(const std::vector<Prediction>& predictions,
                                       const std::vector<ImagePairRecord>& records) {
  std::vector<std::string> problems;
  std::map<std::string, const ImagePairRecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.id, &r);
  std::set<std::string> seen;
  std::vector<EvalPair> out;
  for (const auto& p : predictions) {
    if (!seen.insert(p.id).second) {
      problems.push_back("prediction id '" + p.id + "' repeats");
      continue;
    }
    auto it = by_id.find(p.id);
    if (it == by_id.end()) {
      problems.push_back("prediction id '" + p.id + "' is not in the manifest");
      continue;
    }
    const ImagePairRecord& r = *it->second;
    if (!r.change_summary || r.change_summary->empty()) {
      problems.push_back("record '" + p.id + "' has no change_summary to compare against");
      continue;
    }
    out.push_back(EvalPair{p.id, p.candidate, {*r.change_summary}, r.correspondence_score});
  }
  for (const auto& r : records) {
    if (!seen.count(r.id)) problems.push_back("record '" + r.id + "' has no prediction");
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return out;
}

}  // namespace vixen
