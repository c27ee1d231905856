#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>

#include <json.hpp>

namespace karl {

struct LlmClientConfig {
  std::string endpoint = "http://127.0.0.1:8000/v1/chat/completions";
  std::string model = "gpt-4o-mini";
  double temperature = 1.0;
  int max_attempts = 3;
  double backoff_initial_ms = 500.0;
  double backoff_multiplier = 2.0;
  double timeout_s = 60.0;
  std::string api_key_env = "KARL_LLM_API_KEY";
  std::filesystem::path log_path;  // empty: no log

  bool operator==(const LlmClientConfig&) const = default;
};

/// Append-only JSON-lines log, safe to share between threads.
class AnnotationLog {
public:
  explicit AnnotationLog(std::filesystem::path path);
  void append(nlohmann::json entry);
  const std::filesystem::path& path() const { return path_; }

private:
  std::filesystem::path path_;
  std::mutex mu_;
};

/// Chat-completion client. Every attempt is logged with a timestamp. Transport
/// failures, 429 and 5xx responses are retried with exponential backoff up to
/// max_attempts; other statuses fail at once.
///
/// complete() throws TransportError once the attempts are exhausted and
/// UnparseableResponse for a body without a non-empty message content.
class LlmClient {
public:
  explicit LlmClient(LlmClientConfig config);

  std::string complete(const std::string& system_message, const std::string& user_message);

  const LlmClientConfig& config() const { return config_; }
  /// Total HTTP attempts made by this client.
  long attempts() const { return attempts_.load(); }

  static nlohmann::json request_body(const LlmClientConfig& config, const std::string& system_message,
                                     const std::string& user_message);
  /// choices[0].message.content of a chat-completion response.
  static std::string extract_content(std::string_view body);

private:
  LlmClientConfig config_;
  std::string scheme_host_port_;
  std::string path_;
  std::shared_ptr<AnnotationLog> log_;
  std::atomic<long> attempts_{0};
};

}  // namespace karl
