#include "karl/llm_client.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "karl/common.hpp"

namespace karl {

using nlohmann::json;

namespace {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

}  // namespace

AnnotationLog::AnnotationLog(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
}

void AnnotationLog::append(json entry) {
  entry["ts"] = utc_timestamp();
  const std::string line = entry.dump() + "\n";
  std::lock_guard lock(mu_);
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  out << line;
}

LlmClient::LlmClient(LlmClientConfig config) : config_(std::move(config)) {
  if (config_.max_attempts < 1) throw ConfigError("llm: max_attempts must be at least 1");
  const auto& url = config_.endpoint;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("llm: endpoint must be an http(s) URL: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (!config_.log_path.empty()) log_ = std::make_shared<AnnotationLog>(config_.log_path);
}

json LlmClient::request_body(const LlmClientConfig& config, const std::string& system_message,
                             const std::string& user_message) {
  return {{"model", config.model},
          {"temperature", config.temperature},
          {"messages",
           json::array({{{"role", "system"}, {"content", system_message}},
                        {{"role", "user"}, {"content", user_message}}})}};
}

std::string LlmClient::extract_content(std::string_view body) {
  if (body.empty()) throw UnparseableResponse("empty response body");
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded()) throw UnparseableResponse("response body is not JSON");
  try {
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (!content.is_string() || content.get<std::string>().empty()) {
      throw UnparseableResponse("response has no message content");
    }
    return content.get<std::string>();
  } catch (const json::exception&) {
    throw UnparseableResponse("response is not a chat completion");
  }
}

std::string LlmClient::complete(const std::string& system_message, const std::string& user_message) {
  const std::string body = request_body(config_, system_message, user_message).dump();
  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  double delay_ms = config_.backoff_initial_ms;
  std::string last_error;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    ++attempts_;
    httplib::Client cli(scheme_host_port_);
    const auto timeout = std::chrono::duration<double>(config_.timeout_s);
    cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    cli.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    auto res = cli.Post(path_, headers, body, "application/json");

    json entry = {{"attempt", attempt}, {"endpoint", config_.endpoint}, {"request", json::parse(body)}};
    bool retry = false;
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      entry["error"] = last_error;
      retry = true;
    } else {
      entry["status"] = res->status;
      entry["response"] = res->body;
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        retry = true;
      } else if (res->status < 200 || res->status >= 300) {
        last_error = "HTTP " + std::to_string(res->status);
      }
    }
    if (log_) log_->append(std::move(entry));

    if (res && res->status >= 200 && res->status < 300) return extract_content(res->body);
    if (!retry) throw TransportError("llm request failed: " + last_error);
    if (attempt < config_.max_attempts) {
      spdlog::debug("llm attempt {} failed ({}); retrying in {:.0f} ms", attempt, last_error, delay_ms);
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(delay_ms));
      delay_ms *= config_.backoff_multiplier;
    }
  }
  throw TransportError("llm request failed after " + std::to_string(config_.max_attempts) + " attempts: " +
                       last_error);
}

}  // namespace karl
