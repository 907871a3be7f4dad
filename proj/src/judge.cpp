#include "alab/judge.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"
#include "json.hpp"

#include "alab/binary_io.hpp"
#include "alab/errors.hpp"

namespace alab {

namespace {

constexpr std::string_view kJudgeTemplate =
    R"(You will be given one summary written for a news article along with the news article.

Your task is to rate the summary on one metric, that is topical coherence.

Please make sure you read and understand these instructions carefully. Please keep this document open while reviewing, and refer to it as needed.

Evaluation Criteria:

Topical Coherence: Ensure the summary focuses on the topics (there can be more than one topic) requested by the user. The summary should reflect the content of the article and not introduce made-up information. It should draw conclusions or summarize only the details presented in the input. The summary should not include any unrelated or extraneous information that is not aligned with the topic or input article.

Evaluation Steps:
1. Read the Input Article: Understand the main topics and points that should be covered in the summary.
2. Read the topic(s) provided by the user.
3. Read the Summary: Carefully go through the summary and assess whether it covers the topic in a meaningful and coherent way.
4. Score the Summary: 1-5 scale:
   - 1: The summary somewhat reflects the topic but contains a significant amount of irrelevant or incorrect information or misses relevant information.
   - 2: The summary is generally on-topic, but may include minor irrelevant details or miss some key points.
   - 3: The summary is mostly on-topic, covering the requested topic well with very few irrelevant details.
   - 4: The summary reflects the requested topic with full coherence and no irrelevant or made-up content.
   - 5: The summary is perfectly on-topic, coherent, and includes all the key points from the input article and is very crisp and to the point.
5. Just respond with the one score and nothing else.

Example:
- Source Text:
{document}
- Topics:
{topics}
- Summary:
{summary}
- Evaluation Form (scores ONLY):
   - Topical Coherence:)";

std::string_view strip(std::string_view s) {
  auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; };
  while (!s.empty() && ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && ws(s.back())) s.remove_suffix(1);
  return s;
}

std::optional<int> canned_status(std::string_view reply) {
  constexpr std::string_view tag = "!status ";
  if (reply.substr(0, tag.size()) != tag) return std::nullopt;
  return std::atoi(std::string(reply.substr(tag.size())).c_str());
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  const std::string text = read_file_bytes(path);
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(std::move(line));
    start = nl + 1;
  }
  return out;
}

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;    // without trailing slash
};

Url split_url(const std::string& endpoint) {
  const auto scheme = endpoint.find("://");
  if (scheme == std::string::npos) throw ConfigError("endpoint: \"" + endpoint + "\" is not an http(s) URL");
  const auto slash = endpoint.find('/', scheme + 3);
  Url u;
  u.origin = endpoint.substr(0, slash);
  u.path = slash == std::string::npos ? "" : endpoint.substr(slash);
  while (!u.path.empty() && u.path.back() == '/') u.path.pop_back();
  return u;
}

}  // namespace

std::string render_judge_prompt(std::string_view document, std::string_view topics, std::string_view summary) {
  if (document.empty() || topics.empty() || summary.empty()) {
    throw ContractError("judge prompt needs a nonempty document, topics and summary");
  }
  std::string out;
  std::string_view rest = kJudgeTemplate;
  const std::pair<std::string_view, std::string_view> slots[] = {
      {"{document}", document}, {"{topics}", topics}, {"{summary}", summary}};
  for (const auto& [slot, value] : slots) {
    const auto at = rest.find(slot);
    out += rest.substr(0, at);
    out += value;
    rest.remove_prefix(at + slot.size());
  }
  out += rest;
  return out;
}

void JudgeRequest::validate() const {
  if (samples == 0) throw ConfigError("samples: must be at least 1");
  if (strip(topics).empty()) throw ConfigError("topics: must be nonempty");
  if (!(temperature >= 0.0)) throw ConfigError("temperature: must be non-negative");
}

std::string chat_completion_body(std::string_view content) {
  nlohmann::json j = {{"object", "chat.completion"},
                      {"choices", nlohmann::json::array({{{"index", 0},
                                                          {"message", {{"role", "assistant"}, {"content", content}}},
                                                          {"finish_reason", "stop"}}})}};
  return j.dump();
}

std::string judge_request_body(const JudgeRequest& request) {
  nlohmann::ordered_json j;
  j["model"] = request.model;
  j["messages"] = nlohmann::ordered_json::array(
      {{{"role", "user"}, {"content", render_judge_prompt(request.document, request.topics, request.summary)}}});
  j["temperature"] = request.temperature;
  return j.dump();
}

std::optional<int> parse_score(std::string_view reply) {
  const std::string_view s = strip(reply);
  if (s.size() == 1 && s[0] >= '1' && s[0] <= '5') return s[0] - '0';
  return std::nullopt;
}

JudgeVerdict judge(const JudgeRequest& request, JudgeTransport& transport) {
  request.validate();
  const std::string body = judge_request_body(request);
  JudgeVerdict v;
  for (std::size_t k = 0; k < request.samples; ++k) {
    bool parsed = false;
    for (std::size_t attempt = 0; attempt <= request.max_retries && !parsed; ++attempt) {
      ++v.attempts;
      const HttpResponse r = transport.post_chat(request.endpoint, body);
      if (r.status < 200 || r.status >= 300) {
        throw TransportError("judge endpoint returned HTTP " + std::to_string(r.status));
      }
      std::string content;
      try {
        content = nlohmann::json::parse(r.body).at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const nlohmann::json::exception&) {
        continue;
      }
      if (auto score = parse_score(content)) {
        v.scores.push_back(*score);
        parsed = true;
      }
    }
    if (!parsed) ++v.failures;
  }
  if (v.scores.empty()) {
    throw JudgeUnavailableError("no judge reply parsed as a 1-5 score after " + std::to_string(v.attempts) +
                                " attempts");
  }
  double sum = 0.0;
  for (int s : v.scores) sum += s;
  v.mean = sum / static_cast<double>(v.scores.size());
  double sq = 0.0;
  for (int s : v.scores) sq += (s - v.mean) * (s - v.mean);
  v.std = std::sqrt(sq / static_cast<double>(v.scores.size()));
  return v;
}

HttpTransport::HttpTransport(std::chrono::milliseconds timeout) : timeout_(timeout) {
  if (const char* key = std::getenv("ALAB_JUDGE_KEY"); key && *key) key_ = key;
}

HttpResponse HttpTransport::post_chat(const std::string& endpoint, const std::string& body) {
  const Url url = split_url(endpoint);
  httplib::Client cli(url.origin);
  cli.set_connection_timeout(timeout_);
  cli.set_read_timeout(timeout_);
  cli.set_write_timeout(timeout_);
  httplib::Headers headers;
  if (key_) headers.emplace("Authorization", "Bearer " + *key_);
  auto res = cli.Post(url.path + "/chat/completions", headers, body, "application/json");
  if (!res) throw TransportError("judge endpoint unreachable: " + httplib::to_string(res.error()));
  return {res->status, res->body};
}

MockTransport::MockTransport(std::vector<std::string> replies) : replies_(std::move(replies)) {
  if (replies_.empty()) throw ConfigError("mock judge fixture has no replies");
}

MockTransport MockTransport::from_fixture(const std::filesystem::path& path) { return MockTransport(read_lines(path)); }

HttpResponse MockTransport::post_chat(const std::string& /*endpoint*/, const std::string& body) {
  requests_.push_back(body);
  const std::string& reply = replies_[next_++ % replies_.size()];
  if (auto status = canned_status(reply)) return {*status, "{}"};
  return {200, chat_completion_body(reply)};
}

struct MockJudgeServer::Impl {
  httplib::Server server;
  std::vector<std::string> replies;
  std::string required_key;
  std::mutex mu;
  std::size_t next = 0;
  std::atomic<std::size_t> count{0};
  std::thread thread;
  int port = 0;
};

MockJudgeServer::MockJudgeServer(std::vector<std::string> replies, std::string required_key)
    : impl_(std::make_unique<Impl>()) {
  if (replies.empty()) throw ConfigError("mock judge fixture has no replies");
  impl_->replies = std::move(replies);
  impl_->required_key = std::move(required_key);
  Impl* impl = impl_.get();
  impl->server.Post(R"(.*/chat/completions)", [impl](const httplib::Request& req, httplib::Response& res) {
    ++impl->count;
    if (!impl->required_key.empty() && req.get_header_value("Authorization") != "Bearer " + impl->required_key) {
      res.status = 401;
      res.set_content(R"({"error":"unauthorized"})", "application/json");
      return;
    }
    std::string reply;
    {
      std::lock_guard lock(impl->mu);
      reply = impl->replies[impl->next++ % impl->replies.size()];
    }
    if (auto status = canned_status(reply)) {
      res.status = *status;
      res.set_content("{}", "application/json");
      return;
    }
    res.set_content(chat_completion_body(reply), "application/json");
  });
}

MockJudgeServer::~MockJudgeServer() { stop(); }

int MockJudgeServer::start(int port) {
  impl_->port = port == 0 ? impl_->server.bind_to_any_port("127.0.0.1") : port;
  if (port != 0 && !impl_->server.bind_to_port("127.0.0.1", port)) impl_->port = -1;
  if (impl_->port < 0) throw TransportError("mock judge could not bind 127.0.0.1:" + std::to_string(port));
  impl_->thread = std::thread([impl = impl_.get()] { impl->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void MockJudgeServer::listen_blocking(int port) {
  impl_->port = port;
  if (!impl_->server.listen("127.0.0.1", port)) {
    throw TransportError("mock judge could not listen on 127.0.0.1:" + std::to_string(port));
  }
}

void MockJudgeServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string MockJudgeServer::endpoint() const { return "http://127.0.0.1:" + std::to_string(impl_->port) + "/v1"; }

std::size_t MockJudgeServer::request_count() const { return impl_->count.load(); }

}  // namespace alab
