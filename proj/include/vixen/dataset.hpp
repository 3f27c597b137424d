#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vixen/error.hpp"

namespace vixen {

/// One manifest row. Images are referenced by path (relative to the manifest) or URI.
struct ImagePairRecord {
  std::string id;
  std::string src_image;
  std::string edit_image;
  std::string caption_src;
  std::string caption_edit;
  std::string edit_instruction;
  std::optional<std::string> change_summary;
  std::optional<double> correspondence_score;  // average rating in [1, 5]

  friend bool operator==(const ImagePairRecord&, const ImagePairRecord&) = default;
};

inline constexpr std::array<std::string_view, 8> kManifestFields = {
    "id",           "src_image",        "edit_image",     "caption_src",
    "caption_edit", "edit_instruction", "change_summary", "correspondence_score"};

struct ManifestIssue {
  std::size_t line = 0;  // 1-based; 0 for file-level problems
  std::string field;     // empty when the whole line is at fault
  std::string message;
  std::string text() const;
};

/// Every problem found in a manifest, reported together.
class ManifestError : public ConfigError {
 public:
  explicit ManifestError(std::vector<ManifestIssue> issues);
  const std::vector<ManifestIssue>& issues() const noexcept { return issues_; }

 private:
  std::vector<ManifestIssue> issues_;
};

struct ManifestOptions {
  /// Require local image paths to exist (relative paths resolve against base_dir). URIs are not checked.
  bool check_images = true;
  std::filesystem::path base_dir;
};

/// Parses JSON-lines text. Blank lines are skipped; unknown fields are errors.
std::vector<ImagePairRecord> parse_manifest(std::string_view text, const ManifestOptions& options = {});
/// Reads and validates a manifest; images resolve against the manifest's directory.
std::vector<ImagePairRecord> load_manifest(const std::filesystem::path& path, bool check_images = true);

/// Fields in kManifestFields order; absent optionals are omitted.
nlohmann::ordered_json record_to_json(const ImagePairRecord& record);
std::string manifest_text(const std::vector<ImagePairRecord>& records);
void save_manifest(const std::filesystem::path& path, const std::vector<ImagePairRecord>& records);

// --- few-shot summarization prompt ------------------------------------------

/// Instruction line, the three worked examples, then the record's captions,
/// instruction and a final "Summary:" with no trailing space or newline.
std::string build_fewshot_prompt(const ImagePairRecord& record);
/// Length of the prompt excluding the three inserted fields.
std::size_t fewshot_template_length();

// --- correspondence scores --------------------------------------------------

struct ScoreHistogram {
  std::array<std::size_t, 5> counts{};  // bins 1..5
  std::array<double, 5> percent{};
  std::size_t scored = 0;
  std::size_t unscored = 0;
  bool empty() const noexcept { return scored == 0; }
};

/// Bins each score by rounding to the nearest integer (halves away from zero).
ScoreHistogram score_stats(const std::vector<ImagePairRecord>& records);

/// Records whose score is present and >= min_score, in input order.
std::vector<ImagePairRecord> filter_min_score(const std::vector<ImagePairRecord>& records, double min_score);

// --- splits -----------------------------------------------------------------

struct Partition {
  std::string name;
  std::optional<double> fraction;
  std::vector<std::string> ids;  // explicit mode
};

// Either every partition has a fraction (summing to 1) or every partition
// lists ids explicitly (disjoint and covering the manifest).
struct SplitSpec {
  std::vector<Partition> partitions;
  std::uint64_t seed = 0;
};

SplitSpec split_spec_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json to_json(const SplitSpec& spec);

/// Partition name -> ids, in spec order. Fraction mode shuffles ids with the
/// seed and sizes parts by largest remainder.
std::vector<std::pair<std::string, std::vector<std::string>>> split(const std::vector<ImagePairRecord>& records,
                                                                    const SplitSpec& spec);

// --- LLM augmentation -------------------------------------------------------

struct LlmClientConfig {
  std::string endpoint = "https://api.openai.com/v1/completions";
  std::string model = "davinci";
  double temperature = 0.7;
  std::size_t max_tokens = 128;
  std::string stop = "\n\n";
  std::size_t max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  double backoff_multiplier = 2.0;
  std::chrono::milliseconds max_backoff{30000};
  std::size_t concurrency = 4;
  std::string api_key_env = "OPENAI_API_KEY";
  std::chrono::seconds timeout{60};

  std::vector<std::string> problems() const;
};

nlohmann::ordered_json to_json(const LlmClientConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
LlmClientConfig llm_config_from_json(const nlohmann::ordered_json& j);

struct LlmReply {
  enum class Status { Ok, RateLimited, Transient, Fatal };
  Status status = Status::Ok;
  std::string text;
  std::optional<std::chrono::milliseconds> retry_after;
  std::string detail;
};

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  /// Must be safe to call from several threads at once.
  virtual LlmReply complete(const std::string& prompt) = 0;
};

// Completions-style JSON over HTTP(S): POST {model, prompt, temperature,
// max_tokens, stop}, reads choices[0].text. 429 is RateLimited (honouring
// Retry-After), 5xx and connection failures are Transient, other statuses Fatal.
class HttpLlmClient final : public LlmClient {
 public:
  explicit HttpLlmClient(LlmClientConfig config);
  LlmReply complete(const std::string& prompt) override;

 private:
  LlmClientConfig config_;
  std::string api_key_;
};

struct AuditEntry {
  std::string id;
  std::size_t attempts = 0;
  double latency_ms = 0.0;
  std::string outcome;  // filled, skipped, empty, failed
  std::string detail;
};

struct AugmentResult {
  std::vector<ImagePairRecord> records;
  std::vector<AuditEntry> audit;  // sorted by id
  std::size_t filled = 0;
  std::size_t failed = 0;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// Fills change_summary for records that lack one; others are left as they
/// are. Failed records stay unfilled and are recorded in the audit log.
AugmentResult augment_with_llm(const std::vector<ImagePairRecord>& records, LlmClient& client,
                               const LlmClientConfig& config, const Sleeper& sleep = {});

void write_audit_log(const std::filesystem::path& path, const std::vector<AuditEntry>& audit);

}  // namespace vixen
