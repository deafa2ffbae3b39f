#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mortpred/metrics.hpp"
#include "mortpred/narrative.hpp"

namespace mortpred {

enum class ZscLabel { Survive, Die, Undefined, Failed };
std::string to_string(ZscLabel l);
ZscLabel parse_zsc_label(const std::string& s);

/// Case-insensitive whole-word search for the survive family (survive,
/// survival) and the die family (die, dies, died, death). Exactly one family
/// present gives that label. Both, neither, or a negated keyword ("not
/// survive", "won't die", ...) give Undefined.
ZscLabel extract_label(const std::string& response);

struct ChatEndpointConfig {
  std::string base_url = "https://api.openai.com";
  std::string path = "/v1/chat/completions";
  std::string model = "gpt-3.5-turbo";
  std::string api_key_env = "OPENAI_API_KEY";
  std::string api_key;  // resolved from api_key_env when empty
  double temperature = 1.0;
  int max_tokens = 1024;
  long seed = 123;
  double timeout_seconds = 60.0;
  std::size_t max_parallel = 1;
  double requests_per_minute = 0.0;  // 0: unlimited
  int max_transport_retries = 4;
  double backoff_initial_seconds = 0.5;

  SamplingParams sampling() const { return {temperature, max_tokens, seed}; }
};

/// Throws InvalidConfig.
void validate(const ChatEndpointConfig& c);
nlohmann::json to_json(const ChatEndpointConfig& c);  // never includes the key
ChatEndpointConfig endpoint_from_json(const nlohmann::json& j);

/// Wire payload: model, messages, temperature, max_tokens, seed.
nlohmann::json chat_request_body(const PromptBundle& prompt, const std::string& model);
/// choices[0].message.content; FormatError on anything else.
std::string chat_response_text(const std::string& body);

struct RequestTag {
  std::string patient_id;
  int attempt = 1;
};

/// One request, one fresh conversation. Implementations throw
/// TransportError for retryable failures and AuthError for 401/403.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual std::string complete(const PromptBundle& prompt, const RequestTag& tag) = 0;
};

/// Requests-per-minute limiter shared by all workers.
class TokenBucket {
 public:
  using Clock = std::chrono::steady_clock;
  explicit TokenBucket(double per_minute, double burst = 1.0);
  /// Blocks until a token is available.
  void acquire();
  /// Non-blocking; returns the wait needed before a token would be available.
  std::chrono::duration<double> try_acquire(Clock::time_point now);

 private:
  std::mutex mu_;
  double rate_per_second_;
  double capacity_;
  double tokens_;
  Clock::time_point last_;
};

/// POSTs to base_url + path with a bearer token. Adds X-Zsc-Patient and
/// X-Zsc-Attempt headers so scripted endpoints can key their replies.
class HttpChatClient : public ChatClient {
 public:
  explicit HttpChatClient(ChatEndpointConfig config);
  std::string complete(const PromptBundle& prompt, const RequestTag& tag) override;

 private:
  ChatEndpointConfig config_;
  std::unique_ptr<TokenBucket> bucket_;
};

struct EscalationPolicy {
  int max_attempts = 5;
  int strict_from_attempt = 2;  // 1-based; > max_attempts never escalates
  PromptVariant first = PromptVariant::Improved;
  PromptVariant variant_for(int attempt) const;
};

struct ZscAttempt {
  PromptVariant variant = PromptVariant::Improved;
  std::string response;
  ZscLabel label = ZscLabel::Undefined;
  double latency_seconds = 0.0;
};

struct ZscOutcome {
  std::string patient_id;
  int true_label = 0;
  std::vector<ZscAttempt> attempts;
  ZscLabel final_label = ZscLabel::Failed;
  int transport_retries = 0;
};

nlohmann::json to_json(const ZscOutcome& o);
ZscOutcome zsc_outcome_from_json(const nlohmann::json& j);

/// Sleep hook so tests can run backoff without waiting.
using SleepFn = std::function<void(std::chrono::duration<double>)>;

/// Up to policy.max_attempts fresh conversations; stops at the first defined
/// label. Transport failures are retried with exponential backoff and do not
/// count as attempts. AuthError propagates.
ZscOutcome classify_patient(const CorpusRecord& record, ChatClient& client, const EscalationPolicy& policy,
                            const SamplingParams& sampling, int max_transport_retries = 4,
                            double backoff_initial_seconds = 0.5, const SleepFn& sleep = {});

enum class FailedPolicy { CountIncorrect, Exclude };
std::string to_string(FailedPolicy p);
FailedPolicy parse_failed_policy(const std::string& s);

struct ZscRunOptions {
  EscalationPolicy policy;
  SamplingParams sampling;
  FailedPolicy failed = FailedPolicy::CountIncorrect;
  std::size_t max_parallel = 1;
  int max_transport_retries = 4;
  double backoff_initial_seconds = 0.5;
  bool record_latency = true;  // off keeps the log a function of the replies alone
  SleepFn sleep;
};

struct ZscPatientError {
  std::string patient_id;
  std::string code;
  std::string message;
};

struct ZscRunResult {
  std::vector<ZscOutcome> outcomes;  // corpus order, resumed ones included
  std::size_t resumed = 0;
  std::size_t requests = 0;
  std::vector<ZscPatientError> errors;  // not logged, retried on resume
  MetricsReport report;
  std::size_t failed = 0;
  std::size_t evaluated = 0;
};

/// Predictions used for scoring; Failed rows become the wrong class under
/// CountIncorrect or are dropped under Exclude.
MetricsReport zsc_metrics(const std::vector<ZscOutcome>& outcomes, FailedPolicy policy, std::size_t* evaluated = nullptr);

/// Runs every corpus record not already present in the JSONL log at
/// `log_path`, appending one outcome per line in corpus order. AuthError
/// aborts the run; other per-patient errors are collected and skipped.
ZscRunResult run_zsc(const std::vector<CorpusRecord>& corpus, ChatClient& client, const ZscRunOptions& options,
                     const std::filesystem::path& log_path);

std::vector<ZscOutcome> read_zsc_log(const std::filesystem::path& path);

nlohmann::json to_json(const ZscRunResult& r);

}  // namespace mortpred
