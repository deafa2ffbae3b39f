#include "mortpred/llm.hpp"

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <map>
#include <thread>

#include "mortpred/error.hpp"
#include "mortpred/io.hpp"

namespace mortpred {

using nlohmann::json;

std::string to_string(ZscLabel l) {
  switch (l) {
    case ZscLabel::Survive: return "survive";
    case ZscLabel::Die: return "die";
    case ZscLabel::Undefined: return "undefined";
    case ZscLabel::Failed: return "failed";
  }
  return "undefined";
}

ZscLabel parse_zsc_label(const std::string& s) {
  if (s == "survive") return ZscLabel::Survive;
  if (s == "die") return ZscLabel::Die;
  if (s == "undefined") return ZscLabel::Undefined;
  if (s == "failed") return ZscLabel::Failed;
  throw Error(ErrorCode::FormatError, "unknown ZSC label '" + s + "'");
}

// --- label extraction ---------------------------------------------------------

namespace {

std::vector<std::string> words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(cur);
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    // U+2019 (right single quote) is common in model output: E2 80 99.
    if (c == 0xE2 && i + 2 < text.size() && static_cast<unsigned char>(text[i + 1]) == 0x80 &&
        static_cast<unsigned char>(text[i + 2]) == 0x99) {
      cur += '\'';
      i += 2;
    } else if (std::isalpha(c) || (c == '\'' && !cur.empty())) {
      cur += static_cast<char>(std::tolower(c));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

bool is_negation(const std::string& w) {
  static const char* const kNeg[] = {"not",    "no",     "never",  "won't", "wont",     "cannot", "can't",
                                     "don't",  "doesn't", "isn't", "unlikely", "neither", "nor",   "without"};
  return std::any_of(std::begin(kNeg), std::end(kNeg), [&](const char* n) { return w == n; });
}

}  // namespace

ZscLabel extract_label(const std::string& response) {
  const auto w = words(response);
  bool survive = false, die = false, negated = false;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const bool s = w[i] == "survive" || w[i] == "survival";
    const bool d = w[i] == "die" || w[i] == "dies" || w[i] == "died" || w[i] == "death";
    if (!s && !d) continue;
    survive |= s;
    die |= d;
    for (std::size_t k = 1; k <= 3 && k <= i; ++k) negated |= is_negation(w[i - k]);
  }
  if (negated || survive == die) return ZscLabel::Undefined;
  return survive ? ZscLabel::Survive : ZscLabel::Die;
}

// --- endpoint config and wire format --------------------------------------------

void validate(const ChatEndpointConfig& c) {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
  if (!(c.temperature >= 0.0 && c.temperature <= 2.0)) bad("temperature must lie in [0, 2]");
  if (c.max_tokens < 1) bad("max_tokens must be at least 1");
  if (c.base_url.empty()) bad("base_url is empty");
  if (c.max_parallel < 1) bad("max_parallel must be at least 1");
  if (c.requests_per_minute < 0) bad("requests_per_minute must be non-negative");
  if (c.max_transport_retries < 0) bad("max_transport_retries must be non-negative");
  if (!(c.timeout_seconds > 0)) bad("timeout_seconds must be positive");
}

json to_json(const ChatEndpointConfig& c) {
  return {{"base_url", c.base_url},
          {"path", c.path},
          {"model", c.model},
          {"api_key_env", c.api_key_env},
          {"temperature", c.temperature},
          {"max_tokens", c.max_tokens},
          {"seed", c.seed},
          {"timeout_seconds", c.timeout_seconds},
          {"max_parallel", c.max_parallel},
          {"requests_per_minute", c.requests_per_minute},
          {"max_transport_retries", c.max_transport_retries},
          {"backoff_initial_seconds", c.backoff_initial_seconds}};
}

ChatEndpointConfig endpoint_from_json(const json& j) {
  ChatEndpointConfig c;
  c.base_url = j.value("base_url", c.base_url);
  c.path = j.value("path", c.path);
  c.model = j.value("model", c.model);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.temperature = j.value("temperature", c.temperature);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.seed = j.value("seed", c.seed);
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  c.max_parallel = j.value("max_parallel", c.max_parallel);
  c.requests_per_minute = j.value("requests_per_minute", c.requests_per_minute);
  c.max_transport_retries = j.value("max_transport_retries", c.max_transport_retries);
  c.backoff_initial_seconds = j.value("backoff_initial_seconds", c.backoff_initial_seconds);
  validate(c);
  return c;
}

json chat_request_body(const PromptBundle& prompt, const std::string& model) {
  json messages = json::array();
  for (const auto& m : prompt.messages()) messages.push_back({{"role", m.role}, {"content", m.content}});
  return {{"model", model},
          {"messages", messages},
          {"temperature", prompt.sampling.temperature},
          {"max_tokens", prompt.sampling.max_tokens},
          {"seed", prompt.sampling.seed}};
}

std::string chat_response_text(const std::string& body) {
  try {
    const auto j = json::parse(body);
    const auto& content = j.at("choices").at(0).at("message").at("content");
    return content.is_null() ? std::string() : content.get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("unexpected chat response: ") + e.what());
  }
}

// --- rate limiting ----------------------------------------------------------------

TokenBucket::TokenBucket(double per_minute, double burst)
    : rate_per_second_(per_minute / 60.0), capacity_(std::max(1.0, burst)), tokens_(capacity_), last_(Clock::now()) {}

std::chrono::duration<double> TokenBucket::try_acquire(Clock::time_point now) {
  std::lock_guard lock(mu_);
  if (rate_per_second_ <= 0) return std::chrono::duration<double>(0);
  const std::chrono::duration<double> dt = now - last_;
  if (dt.count() > 0) {
    tokens_ = std::min(capacity_, tokens_ + dt.count() * rate_per_second_);
    last_ = now;
  }
  if (tokens_ >= 1.0) {
    tokens_ -= 1.0;
    return std::chrono::duration<double>(0);
  }
  return std::chrono::duration<double>((1.0 - tokens_) / rate_per_second_);
}

void TokenBucket::acquire() {
  while (true) {
    const auto wait = try_acquire(Clock::now());
    if (wait.count() <= 0) return;
    std::this_thread::sleep_for(wait);
  }
}

// --- HTTP client --------------------------------------------------------------------

HttpChatClient::HttpChatClient(ChatEndpointConfig config) : config_(std::move(config)) {
  validate(config_);
  if (config_.api_key.empty() && !config_.api_key_env.empty()) {
    if (const char* k = std::getenv(config_.api_key_env.c_str())) config_.api_key = k;
  }
  if (config_.requests_per_minute > 0) bucket_ = std::make_unique<TokenBucket>(config_.requests_per_minute);
}

std::string HttpChatClient::complete(const PromptBundle& prompt, const RequestTag& tag) {
  if (bucket_) bucket_->acquire();
  // A new client per request: no connection or conversation state is shared.
  httplib::Client cli(config_.base_url);
  const auto secs = static_cast<time_t>(config_.timeout_seconds);
  const auto usecs = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  httplib::Headers headers{{"X-Zsc-Patient", tag.patient_id}, {"X-Zsc-Attempt", std::to_string(tag.attempt)}};
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  const std::string body = chat_request_body(prompt, config_.model).dump();
  auto res = cli.Post(config_.path, headers, body, "application/json");
  if (!res) {
    throw Error(ErrorCode::TransportError, "request to " + config_.base_url + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status == 401 || res->status == 403) {
    throw Error(ErrorCode::AuthError, "endpoint rejected credentials (HTTP " + std::to_string(res->status) + ")");
  }
  if (res->status != 200) {
    throw Error(ErrorCode::TransportError, "endpoint returned HTTP " + std::to_string(res->status));
  }
  return chat_response_text(res->body);
}

// --- classification loop ---------------------------------------------------------------

PromptVariant EscalationPolicy::variant_for(int attempt) const {
  return attempt >= strict_from_attempt ? PromptVariant::Strict : first;
}

json to_json(const ZscOutcome& o) {
  json attempts = json::array();
  for (const auto& a : o.attempts) {
    json aj = {{"prompt_variant", to_string(a.variant)}, {"response", a.response}, {"label", to_string(a.label)}};
    if (a.latency_seconds > 0.0) aj["latency_seconds"] = a.latency_seconds;
    attempts.push_back(std::move(aj));
  }
  return {{"patient_id", o.patient_id},
          {"true_label", o.true_label == 1 ? "die" : "survive"},
          {"attempts", attempts},
          {"final_label", to_string(o.final_label)},
          {"transport_retries", o.transport_retries}};
}

ZscOutcome zsc_outcome_from_json(const json& j) {
  ZscOutcome o;
  o.patient_id = j.at("patient_id").get<std::string>();
  o.true_label = j.at("true_label").get<std::string>() == "die" ? 1 : 0;
  for (const auto& a : j.at("attempts")) {
    o.attempts.push_back({parse_prompt_variant(a.at("prompt_variant").get<std::string>()),
                          a.at("response").get<std::string>(), parse_zsc_label(a.at("label").get<std::string>()),
                          a.value("latency_seconds", 0.0)});
  }
  o.final_label = parse_zsc_label(j.at("final_label").get<std::string>());
  o.transport_retries = j.value("transport_retries", 0);
  return o;
}

ZscOutcome classify_patient(const CorpusRecord& record, ChatClient& client, const EscalationPolicy& policy,
                            const SamplingParams& sampling, int max_transport_retries, double backoff_initial_seconds,
                            const SleepFn& sleep) {
  if (policy.max_attempts < 1 || policy.max_attempts > 5) {
    throw Error(ErrorCode::InvalidConfig, "max_attempts must lie in [1, 5]");
  }
  ZscOutcome out;
  out.patient_id = record.patient_id;
  out.true_label = record.label;
  for (int attempt = 1; attempt <= policy.max_attempts; ++attempt) {
    const PromptVariant v = policy.variant_for(attempt);
    const PromptBundle prompt = build_prompt(record.narrative, v, sampling);
    int retries = 0;
    while (true) {
      const auto t0 = std::chrono::steady_clock::now();
      try {
        std::string text = client.complete(prompt, {record.patient_id, attempt});
        const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
        const ZscLabel label = extract_label(text);
        out.attempts.push_back({v, std::move(text), label, dt.count()});
        break;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::TransportError || retries >= max_transport_retries) throw;
        const std::chrono::duration<double> wait(backoff_initial_seconds * std::ldexp(1.0, retries));
        if (sleep) sleep(wait);
        else std::this_thread::sleep_for(wait);
        ++retries;
        ++out.transport_retries;
      }
    }
    if (out.attempts.back().label != ZscLabel::Undefined) {
      out.final_label = out.attempts.back().label;
      return out;
    }
  }
  out.final_label = ZscLabel::Failed;
  return out;
}

std::string to_string(FailedPolicy p) { return p == FailedPolicy::Exclude ? "exclude" : "count-incorrect"; }

FailedPolicy parse_failed_policy(const std::string& s) {
  if (s == "count-incorrect") return FailedPolicy::CountIncorrect;
  if (s == "exclude") return FailedPolicy::Exclude;
  throw Error(ErrorCode::InvalidArgument, "unknown failed-row policy '" + s + "'");
}

MetricsReport zsc_metrics(const std::vector<ZscOutcome>& outcomes, FailedPolicy policy, std::size_t* evaluated) {
  Labels truth, pred;
  for (const auto& o : outcomes) {
    if (o.final_label == ZscLabel::Failed) {
      if (policy == FailedPolicy::Exclude) continue;
      truth.push_back(o.true_label);
      pred.push_back(1 - o.true_label);
    } else {
      truth.push_back(o.true_label);
      pred.push_back(o.final_label == ZscLabel::Die ? 1 : 0);
    }
  }
  if (evaluated) *evaluated = truth.size();
  if (truth.empty()) return {};
  auto report = binary_metrics(confusion(truth, pred));
  // Hard labels as scores: AUC = (recall + specificity) / 2.
  if (report.cm.tp + report.cm.fn > 0 && report.cm.tn + report.cm.fp > 0) {
    Vector s(static_cast<Eigen::Index>(pred.size()));
    for (std::size_t i = 0; i < pred.size(); ++i) s(static_cast<Eigen::Index>(i)) = pred[i];
    report.auc = roc_auc(truth, s).auc;
  }
  return report;
}

std::vector<ZscOutcome> read_zsc_log(const std::filesystem::path& path) {
  std::vector<ZscOutcome> out;
  std::ifstream in(path);
  if (!in) return out;
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines.push_back(line);
  }
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      out.push_back(zsc_outcome_from_json(json::parse(lines[i])));
    } catch (const std::exception& e) {
      // An interrupted run can leave a torn final line; it is redone on resume.
      if (i + 1 == lines.size()) break;
      throw Error(ErrorCode::FormatError, path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

ZscRunResult run_zsc(const std::vector<CorpusRecord>& corpus, ChatClient& client, const ZscRunOptions& options,
                     const std::filesystem::path& log_path) {
  if (corpus.empty()) throw Error(ErrorCode::InvalidArgument, "empty corpus");
  ZscRunResult r;

  std::map<std::string, ZscOutcome> done;
  const auto previous = read_zsc_log(log_path);
  // Rewrite what parsed so appends never follow a torn tail.
  std::string kept;
  for (const auto& o : previous) kept += to_json(o).dump() + "\n";
  io::write_text(log_path, kept);
  for (const auto& o : previous) done[o.patient_id] = o;

  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!done.count(corpus[i].patient_id)) pending.push_back(i);
  }
  r.resumed = corpus.size() - pending.size();

  std::vector<std::optional<ZscOutcome>> slots(pending.size());
  std::vector<bool> finished(pending.size(), false);
  std::ofstream log(log_path, std::ios::app | std::ios::binary);
  if (!log) throw Error(ErrorCode::IoError, "cannot open " + log_path.string());

  std::mutex mu;
  std::size_t next_write = 0;
  std::atomic<std::size_t> next_job{0};
  std::atomic<bool> abort{false};
  std::exception_ptr fatal;

  auto worker = [&] {
    while (!abort) {
      const std::size_t k = next_job++;
      if (k >= pending.size()) return;
      const auto& rec = corpus[pending[k]];
      std::optional<ZscOutcome> outcome;
      std::optional<ZscPatientError> err;
      try {
        outcome = classify_patient(rec, client, options.policy, options.sampling, options.max_transport_retries,
                                   options.backoff_initial_seconds, options.sleep);
        if (!options.record_latency) {
          for (auto& a : outcome->attempts) a.latency_seconds = 0.0;
        }
      } catch (const Error& e) {
        if (e.code() == ErrorCode::AuthError) {
          std::lock_guard lock(mu);
          if (!fatal) fatal = std::current_exception();
          abort = true;
          return;
        }
        err = ZscPatientError{rec.patient_id, std::string(e.code_name()), e.what()};
      }
      std::lock_guard lock(mu);
      slots[k] = std::move(outcome);
      finished[k] = true;
      if (err) r.errors.push_back(*err);
      // Single writer: flush the finished prefix so the log stays in corpus order.
      while (next_write < pending.size() && finished[next_write]) {
        if (slots[next_write]) {
          log << to_json(*slots[next_write]).dump() << '\n';
          log.flush();
        }
        ++next_write;
      }
    }
  };

  const std::size_t n_threads = std::max<std::size_t>(1, std::min(options.max_parallel, pending.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  log.close();
  if (fatal) std::rethrow_exception(fatal);

  for (std::size_t k = 0; k < pending.size(); ++k) {
    if (slots[k]) done[slots[k]->patient_id] = *slots[k];
  }
  for (const auto& rec : corpus) {
    if (auto it = done.find(rec.patient_id); it != done.end()) {
      r.outcomes.push_back(it->second);
      if (it->second.final_label == ZscLabel::Failed) ++r.failed;
    }
  }
  for (const auto& slot : slots) {
    if (slot) r.requests += slot->attempts.size() + static_cast<std::size_t>(slot->transport_retries);
  }
  std::sort(r.errors.begin(), r.errors.end(),
            [](const ZscPatientError& a, const ZscPatientError& b) { return a.patient_id < b.patient_id; });
  r.report = zsc_metrics(r.outcomes, options.failed, &r.evaluated);
  return r;
}

json to_json(const ZscRunResult& r) {
  json errors = json::array();
  for (const auto& e : r.errors) errors.push_back({{"patient_id", e.patient_id}, {"code", e.code}, {"message", e.message}});
  json j = {{"patients", r.outcomes.size()}, {"resumed", r.resumed},   {"failed", r.failed},
            {"evaluated", r.evaluated},      {"errors", errors}};
  j["metrics"] = r.evaluated > 0 ? to_json(r.report, false) : json(nullptr);
  return j;
}

}  // namespace mortpred
