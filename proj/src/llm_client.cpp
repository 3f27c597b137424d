#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <thread>

#include "vixen/binary_io.hpp"
#include "vixen/dataset.hpp"

namespace vixen {

using json = nlohmann::ordered_json;

std::vector<std::string> LlmClientConfig::problems() const {
  std::vector<std::string> p;
  if (endpoint.rfind("http://", 0) != 0 && endpoint.rfind("https://", 0) != 0) {
    p.push_back("llm.endpoint must start with http:// or https:// (got '" + endpoint + "')");
  }
  if (model.empty()) p.emplace_back("llm.model must not be empty");
  if (!(temperature >= 0.0 && temperature <= 2.0)) p.emplace_back("llm.temperature must be in [0, 2]");
  if (max_tokens == 0) p.emplace_back("llm.max_tokens must be positive");
  if (max_retries > 20) p.emplace_back("llm.max_retries must be at most 20");
  if (concurrency == 0) p.emplace_back("llm.concurrency must be at least 1");
  if (backoff_multiplier < 1.0) p.emplace_back("llm.backoff_multiplier must be >= 1");
  if (initial_backoff.count() < 0 || max_backoff < initial_backoff) {
    p.emplace_back("llm backoff must satisfy 0 <= initial_backoff_ms <= max_backoff_ms");
  }
  if (timeout.count() <= 0) p.emplace_back("llm.timeout_s must be positive");
  return p;
}

json to_json(const LlmClientConfig& c) {
  return json{{"endpoint", c.endpoint},
              {"model", c.model},
              {"temperature", c.temperature},
              {"max_tokens", c.max_tokens},
              {"stop", c.stop},
              {"max_retries", c.max_retries},
              {"initial_backoff_ms", c.initial_backoff.count()},
              {"backoff_multiplier", c.backoff_multiplier},
              {"max_backoff_ms", c.max_backoff.count()},
              {"concurrency", c.concurrency},
              {"api_key_env", c.api_key_env},
              {"timeout_s", c.timeout.count()}};
}

LlmClientConfig llm_config_from_json(const json& j) {
  LlmClientConfig c;
  std::vector<std::string> problems;
  if (!j.is_object()) throw ConfigError({"llm config must be an object"});
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "endpoint") c.endpoint = v.get<std::string>();
      else if (key == "model") c.model = v.get<std::string>();
      else if (key == "temperature") c.temperature = v.get<double>();
      else if (key == "max_tokens") c.max_tokens = v.get<std::size_t>();
      else if (key == "stop") c.stop = v.get<std::string>();
      else if (key == "max_retries") c.max_retries = v.get<std::size_t>();
      else if (key == "initial_backoff_ms") c.initial_backoff = std::chrono::milliseconds(v.get<std::int64_t>());
      else if (key == "backoff_multiplier") c.backoff_multiplier = v.get<double>();
      else if (key == "max_backoff_ms") c.max_backoff = std::chrono::milliseconds(v.get<std::int64_t>());
      else if (key == "concurrency") c.concurrency = v.get<std::size_t>();
      else if (key == "api_key_env") c.api_key_env = v.get<std::string>();
      else if (key == "timeout_s") c.timeout = std::chrono::seconds(v.get<std::int64_t>());
      else problems.push_back("llm config: unknown key '" + key + "'");
    } catch (const json::exception&) {
      problems.push_back("llm config: '" + key + "' has the wrong type");
    }
  }
  for (auto& p : c.problems()) problems.push_back(std::move(p));
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return c;
}

// --- HTTP client ------------------------------------------------------------

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

HttpLlmClient::HttpLlmClient(LlmClientConfig config) : config_(std::move(config)) {
  auto problems = config_.problems();
  if (!problems.empty()) throw ConfigError(std::move(problems));
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
  }
}

LlmReply HttpLlmClient::complete(const std::string& prompt) {
  const Endpoint ep = split_endpoint(config_.endpoint);
  httplib::Client client(ep.origin);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  client.set_write_timeout(config_.timeout);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  json body{{"model", config_.model},
            {"prompt", prompt},
            {"temperature", config_.temperature},
            {"max_tokens", config_.max_tokens}};
  if (!config_.stop.empty()) body["stop"] = config_.stop;

  LlmReply reply;
  auto res = client.Post(ep.path, headers, body.dump(), "application/json");
  if (!res) {
    reply.status = LlmReply::Status::Transient;
    reply.detail = "transport: " + httplib::to_string(res.error());
    return reply;
  }
  if (res->status == 429) {
    reply.status = LlmReply::Status::RateLimited;
    reply.detail = "HTTP 429";
    if (res->has_header("Retry-After")) {
      try {
        const double s = std::stod(res->get_header_value("Retry-After"));
        if (s >= 0.0) reply.retry_after = std::chrono::milliseconds(static_cast<std::int64_t>(std::ceil(s * 1000.0)));
      } catch (const std::exception&) {
        // HTTP-date form: fall back to the backoff policy.
      }
    }
    return reply;
  }
  if (res->status >= 500) {
    reply.status = LlmReply::Status::Transient;
    reply.detail = "HTTP " + std::to_string(res->status);
    return reply;
  }
  if (res->status != 200) {
    reply.status = LlmReply::Status::Fatal;
    reply.detail = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
    return reply;
  }
  try {
    const json j = json::parse(res->body);
    reply.text = j.at("choices").at(0).at("text").get<std::string>();
  } catch (const json::exception& e) {
    reply.status = LlmReply::Status::Fatal;
    reply.detail = std::string("unreadable completion: ") + e.what();
  }
  return reply;
}

// --- augmentation -----------------------------------------------------------

namespace {

std::string strip(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n\f\v");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n\f\v");
  return std::string(s.substr(b, e - b + 1));
}

struct Outcome {
  std::optional<std::string> summary;
  AuditEntry audit;
};

Outcome fill_one(const ImagePairRecord& record, LlmClient& client, const LlmClientConfig& config,
                 const Sleeper& sleep) {
  Outcome o;
  o.audit.id = record.id;
  const auto t0 = std::chrono::steady_clock::now();
  auto finish = [&](std::string outcome) {
    o.audit.outcome = std::move(outcome);
    o.audit.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return o;
  };

  std::string prompt;
  try {
    prompt = build_fewshot_prompt(record);
  } catch (const ConfigError& e) {
    o.audit.detail = e.what();
    return finish("failed");
  }

  auto backoff = config.initial_backoff;
  std::vector<std::string> notes;
  for (std::size_t attempt = 0; attempt <= config.max_retries; ++attempt) {
    ++o.audit.attempts;
    LlmReply reply;
    try {
      reply = client.complete(prompt);
    } catch (const std::exception& e) {
      reply.status = LlmReply::Status::Transient;
      reply.detail = std::string("client error: ") + e.what();
    }
    if (reply.status == LlmReply::Status::Ok) {
      std::string text = strip(reply.text);
      if (text.empty()) {
        notes.emplace_back("empty completion");
        o.audit.detail = "empty completion";
        return finish("empty");
      }
      o.summary = std::move(text);
      o.audit.detail.clear();
      for (std::size_t i = 0; i < notes.size(); ++i) o.audit.detail += (i ? "; " : "") + notes[i];
      return finish("filled");
    }
    notes.push_back(reply.detail.empty() ? "failed attempt" : reply.detail);
    if (reply.status == LlmReply::Status::Fatal || attempt == config.max_retries) break;
    auto wait = backoff;
    if (reply.status == LlmReply::Status::RateLimited && reply.retry_after) wait = *reply.retry_after;
    if (sleep) sleep(wait);
    backoff = std::min(config.max_backoff, std::chrono::milliseconds(static_cast<std::int64_t>(
                                               static_cast<double>(backoff.count()) * config.backoff_multiplier)));
  }
  for (std::size_t i = 0; i < notes.size(); ++i) o.audit.detail += (i ? "; " : "") + notes[i];
  return finish("failed");
}

}  // namespace

AugmentResult augment_with_llm(const std::vector<ImagePairRecord>& records, LlmClient& client,
                               const LlmClientConfig& config, const Sleeper& sleep) {
  auto problems = config.problems();
  if (!problems.empty()) throw ConfigError(std::move(problems));
  const Sleeper pause = sleep ? sleep : Sleeper([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); });

  AugmentResult result;
  result.records = records;
  std::vector<std::size_t> todo;
  std::vector<Outcome> outcomes(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].change_summary && !records[i].change_summary->empty()) {
      outcomes[i].audit = AuditEntry{records[i].id, 0, 0.0, "skipped", "already filled"};
    } else {
      todo.push_back(i);
    }
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t n = next++; n < todo.size(); n = next++) {
      outcomes[todo[n]] = fill_one(records[todo[n]], client, config, pause);
    }
  };
  const std::size_t threads = std::min(config.concurrency, todo.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  if (threads > 0) worker();
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < records.size(); ++i) {
    if (outcomes[i].summary) {
      result.records[i].change_summary = *outcomes[i].summary;
      ++result.filled;
    } else if (outcomes[i].audit.outcome == "failed" || outcomes[i].audit.outcome == "empty") {
      ++result.failed;
    }
    result.audit.push_back(std::move(outcomes[i].audit));
  }
  std::stable_sort(result.audit.begin(), result.audit.end(),
                   [](const AuditEntry& a, const AuditEntry& b) { return a.id < b.id; });
  return result;
}

void write_audit_log(const std::filesystem::path& path, const std::vector<AuditEntry>& audit) {
  std::string out;
  for (const auto& a : audit) {
    json j{{"id", a.id},
           {"attempts", a.attempts},
           {"retries", a.attempts > 0 ? a.attempts - 1 : 0},
           {"latency_ms", a.latency_ms},
           {"outcome", a.outcome},
           {"detail", a.detail}};
    out += j.dump() + "\n";
  }
  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  write_file_atomic(path, out);
}

}  // namespace vixen
