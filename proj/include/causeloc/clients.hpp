#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace causeloc {

enum class RequestKind { ProposePrompts, GenerateImage, EditImage, Verify, Encode, Embed };
enum class Status { Ok, Retryable, Fatal };

const char* to_string(RequestKind k);
const char* to_string(Status s);
Status parse_status(const std::string& s);

inline constexpr int kProtocolVersion = 1;

// POST path for a request kind, e.g. "/v1/verify".
const char* endpoint_for(RequestKind k);
std::optional<RequestKind> kind_for_endpoint(const std::string& path);

struct ClientRequest {
  RequestKind kind = RequestKind::Verify;
  nlohmann::json payload = nlohmann::json::object();
  // Derived from (kind, payload); identical requests share a key.
  std::string idempotency_key;
};

struct ClientResponse {
  Status status = Status::Ok;
  nlohmann::json body = nlohmann::json::object();
  std::string error;
};

ClientRequest make_request(RequestKind kind, nlohmann::json payload);

// Wire envelopes.
nlohmann::json request_to_wire(const ClientRequest& r);
ClientRequest request_from_wire(const nlohmann::json& j, RequestKind kind);
nlohmann::json response_to_wire(const ClientResponse& r);
ClientResponse response_from_wire(const nlohmann::json& j);

/// Transport-level interface to one external model service. Implementations
/// must be safe to call from several threads at once.
class ModelClient {
 public:
  virtual ~ModelClient() = default;
  virtual ClientResponse call(const ClientRequest& request) = 0;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds base_delay{50};
};

// Retries Retryable responses with exponential backoff; exceptions thrown
// by the client count as Retryable.
ClientResponse call_with_retry(ModelClient& client, const ClientRequest& request,
                               const RetryPolicy& policy = {});

// --- typed operations -------------------------------------------------------

enum class PromptKind { Positive, CounterConcept, NegativePrompt, EditInstruction };

const char* to_string(PromptKind k);

struct PromptProposal {
  std::vector<std::string> prompts;
  // Proposals rejected because they mention the target concept.
  std::vector<std::string> dropped;
};

// Exactly n prompts. For every kind except Positive, proposals containing
// the target concept (case-insensitive) are dropped and re-requested a
// bounded number of times. `context` names the counter concept for
// NegativePrompt and the parent image for EditInstruction.
PromptProposal propose_prompts(const std::string& concept_name, PromptKind kind, std::size_t n,
                               ModelClient& client, const RetryPolicy& policy = {},
                               const std::string& context = {});

bool mentions_concept(const std::string& text, const std::string& concept_name);

enum class VerifyOutcome { Present, Absent, Unverified };

const char* to_string(VerifyOutcome v);

VerifyOutcome verify(const std::string& image_ref, const std::string& concept_name,
                     ModelClient& client, const RetryPolicy& policy = {});

// Vector of exactly expected_dim values; other lengths are a protocol error.
std::vector<float> encode(const std::string& image_ref, std::size_t expected_dim,
                          ModelClient& client, const RetryPolicy& policy = {});

// Unit-norm embedding of an image ref or concept text.
std::vector<float> embed(const std::string& text_or_ref, bool is_image, ModelClient& client,
                         const RetryPolicy& policy = {});

struct GenerationContext {
  std::string concept_name;           // target concept of the dataset
  std::string role;                   // Positive | SemanticNegative
  std::string counter_concept;        // SemanticNegative only
  std::string item_key;               // unique per requested image
};

std::string generate_image(const std::string& prompt, const GenerationContext& ctx,
                           ModelClient& client, const RetryPolicy& policy = {});
std::string edit_image(const std::string& image_ref, const std::string& instruction,
                       const std::string& concept_name, const std::string& item_key,
                       ModelClient& client, const RetryPolicy& policy = {});

// --- deterministic in-process stub -----------------------------------------

struct StubOptions {
  std::uint64_t seed = 0;
  std::size_t voxel_dim = 8;
  std::size_t embed_dim = 16;
  // Answer for Verify: "yes", "no", or anything else to simulate a failure
  // (reported Retryable). Default: "yes" iff the ref mentions the concept.
  std::function<std::string(const std::string& ref, const std::string& concept_name)> verify_answer;
  // The first CounterConcept/NegativePrompt/EditInstruction batch includes
  // one proposal mentioning the target.
  bool leak_target_in_first_batch = false;
  std::set<RequestKind> fatal_kinds;
  std::set<RequestKind> retryable_kinds;
  // Encode returns voxel_dim + encode_length_delta values.
  long encode_length_delta = 0;
};

/// Deterministic function of (seed, request). Refs it produces embed the
/// concepts they depict so the default verifier can answer from the ref.
class StubClient : public ModelClient {
 public:
  explicit StubClient(StubOptions options = {});
  ClientResponse call(const ClientRequest& request) override;
  std::size_t calls() const { return calls_.load(); }

 private:
  StubOptions options_;
  std::atomic<std::size_t> calls_{0};
};

// --- HTTP transport ----------------------------------------------------------

class HttpClient : public ModelClient {
 public:
  // base_url like "http://127.0.0.1:8080".
  explicit HttpClient(std::string base_url,
                      std::chrono::milliseconds timeout = std::chrono::seconds(30));
  ClientResponse call(const ClientRequest& request) override;

 private:
  std::string base_url_;
  std::chrono::milliseconds timeout_;
};

/// Serves a ModelClient over HTTP on 127.0.0.1. Ok responses are cached by
/// idempotency key, so a replayed request never reaches the backend twice.
class LoopbackServer {
 public:
  explicit LoopbackServer(ModelClient& backend);
  ~LoopbackServer();
  LoopbackServer(const LoopbackServer&) = delete;
  LoopbackServer& operator=(const LoopbackServer&) = delete;

  int port() const;
  std::string base_url() const;
  std::size_t backend_calls() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace causeloc
