#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace alab {

// Fills the topical-coherence rubric. All three fields must be nonempty.
std::string render_judge_prompt(std::string_view document, std::string_view topics, std::string_view summary);

struct JudgeRequest {
  std::string document;
  std::string topics;
  std::string summary;
  std::size_t samples = 3;      // K
  std::size_t max_retries = 3;  // R extra attempts per sample
  std::string endpoint;         // e.g. http://127.0.0.1:8089/v1
  std::string model = "gpt-4o-mini";
  double temperature = 1.0;
  std::chrono::milliseconds timeout{30000};

  void validate() const;
};

struct JudgeVerdict {
  std::vector<int> scores;
  double mean = 0.0;
  double std = 0.0;  // population
  std::size_t failures = 0;
  std::size_t attempts = 0;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

// Anything that can POST a JSON body to {endpoint}/chat/completions.
class JudgeTransport {
 public:
  virtual ~JudgeTransport() = default;
  virtual HttpResponse post_chat(const std::string& endpoint, const std::string& body) = 0;
};

// Real HTTP(S) client. The bearer key is read from ALAB_JUDGE_KEY at
// construction; an unset key sends no Authorization header.
class HttpTransport : public JudgeTransport {
 public:
  explicit HttpTransport(std::chrono::milliseconds timeout = std::chrono::milliseconds(30000));
  HttpResponse post_chat(const std::string& endpoint, const std::string& body) override;

 private:
  std::chrono::milliseconds timeout_;
  std::optional<std::string> key_;
};

// Cycles through canned reply contents without touching the network. A reply
// of the form "!status <code>" produces that HTTP status instead.
class MockTransport : public JudgeTransport {
 public:
  explicit MockTransport(std::vector<std::string> replies);
  // One reply per line.
  static MockTransport from_fixture(const std::filesystem::path& path);

  HttpResponse post_chat(const std::string& endpoint, const std::string& body) override;

  const std::vector<std::string>& requests() const { return requests_; }

 private:
  std::vector<std::string> replies_;
  std::size_t next_ = 0;
  std::vector<std::string> requests_;
};

// Chat-completions response body carrying `content` as the first choice.
std::string chat_completion_body(std::string_view content);

// {"model","messages":[{"role":"user","content":prompt}],"temperature"}, stable bytes.
std::string judge_request_body(const JudgeRequest& request);

// Strict: the reply stripped of whitespace must be a single digit 1-5.
std::optional<int> parse_score(std::string_view reply);

// K samples, each retried up to R times on unparseable replies. Throws
// JudgeUnavailableError when no sample parses and TransportError on non-2xx.
JudgeVerdict judge(const JudgeRequest& request, JudgeTransport& transport);

// Serves canned replies over loopback HTTP in a background thread, in the
// same order and with the same "!status" convention as MockTransport.
class MockJudgeServer {
 public:
  explicit MockJudgeServer(std::vector<std::string> replies, std::string required_key = {});
  ~MockJudgeServer();
  MockJudgeServer(const MockJudgeServer&) = delete;
  MockJudgeServer& operator=(const MockJudgeServer&) = delete;

  // Binds 127.0.0.1 (port 0 picks a free one) and starts serving.
  int start(int port = 0);
  // Blocks serving on the calling thread.
  void listen_blocking(int port);
  void stop();

  std::string endpoint() const;
  std::size_t request_count() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace alab
