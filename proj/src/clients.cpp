#include "causeloc/clients.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <mutex>
#include <thread>
#include <unordered_map>

#define CPPHTTPLIB_LISTEN_BACKLOG 128
#include <httplib.h>

#include "causeloc/error.hpp"
#include "causeloc/hash.hpp"
#include "causeloc/rng.hpp"

namespace causeloc {

const char* to_string(RequestKind k) {
  switch (k) {
    case RequestKind::ProposePrompts: return "ProposePrompts";
    case RequestKind::GenerateImage: return "GenerateImage";
    case RequestKind::EditImage: return "EditImage";
    case RequestKind::Verify: return "Verify";
    case RequestKind::Encode: return "Encode";
    case RequestKind::Embed: return "Embed";
  }
  return "?";
}

const char* to_string(Status s) {
  switch (s) {
    case Status::Ok: return "ok";
    case Status::Retryable: return "retryable";
    case Status::Fatal: return "fatal";
  }
  return "?";
}

Status parse_status(const std::string& s) {
  if (s == "ok") return Status::Ok;
  if (s == "retryable") return Status::Retryable;
  if (s == "fatal") return Status::Fatal;
  fail(ErrorCode::Protocol, "unknown status '" + s + "'");
}

const char* to_string(PromptKind k) {
  switch (k) {
    case PromptKind::Positive: return "Positive";
    case PromptKind::CounterConcept: return "CounterConcept";
    case PromptKind::NegativePrompt: return "NegativePrompt";
    case PromptKind::EditInstruction: return "EditInstruction";
  }
  return "?";
}

const char* to_string(VerifyOutcome v) {
  switch (v) {
    case VerifyOutcome::Present: return "present";
    case VerifyOutcome::Absent: return "absent";
    case VerifyOutcome::Unverified: return "unverified";
  }
  return "?";
}

const char* endpoint_for(RequestKind k) {
  switch (k) {
    case RequestKind::ProposePrompts: return "/v1/propose";
    case RequestKind::GenerateImage: return "/v1/generate";
    case RequestKind::EditImage: return "/v1/edit";
    case RequestKind::Verify: return "/v1/verify";
    case RequestKind::Encode: return "/v1/encode";
    case RequestKind::Embed: return "/v1/embed";
  }
  return "";
}

std::optional<RequestKind> kind_for_endpoint(const std::string& path) {
  for (auto k : {RequestKind::ProposePrompts, RequestKind::GenerateImage, RequestKind::EditImage,
                 RequestKind::Verify, RequestKind::Encode, RequestKind::Embed}) {
    if (path == endpoint_for(k)) return k;
  }
  return std::nullopt;
}

ClientRequest make_request(RequestKind kind, nlohmann::json payload) {
  ClientRequest r;
  r.kind = kind;
  r.payload = std::move(payload);
  r.idempotency_key = hex64(fnv1a64(r.payload.dump(), fnv1a64(to_string(kind))));
  return r;
}

nlohmann::json request_to_wire(const ClientRequest& r) {
  return {{"version", kProtocolVersion},
          {"kind", to_string(r.kind)},
          {"idempotency_key", r.idempotency_key},
          {"payload", r.payload}};
}

ClientRequest request_from_wire(const nlohmann::json& j, RequestKind kind) {
  if (j.value("version", 0) != kProtocolVersion) {
    fail(ErrorCode::Protocol, "unsupported protocol version");
  }
  ClientRequest r;
  r.kind = kind;
  r.payload = j.at("payload");
  r.idempotency_key = j.value("idempotency_key", "");
  if (r.idempotency_key.empty()) r = make_request(kind, r.payload);
  return r;
}

nlohmann::json response_to_wire(const ClientResponse& r) {
  return {{"version", kProtocolVersion},
          {"status", to_string(r.status)},
          {"body", r.body},
          {"error", r.error}};
}

ClientResponse response_from_wire(const nlohmann::json& j) {
  if (j.value("version", 0) != kProtocolVersion) {
    fail(ErrorCode::Protocol, "unsupported protocol version");
  }
  ClientResponse r;
  r.status = parse_status(j.at("status").get<std::string>());
  r.body = j.value("body", nlohmann::json::object());
  r.error = j.value("error", "");
  return r;
}

ClientResponse call_with_retry(ModelClient& client, const ClientRequest& request,
                               const RetryPolicy& policy) {
  ClientResponse last;
  for (int attempt = 0; attempt <= policy.max_retries; ++attempt) {
    if (attempt > 0 && policy.base_delay.count() > 0) {
      std::this_thread::sleep_for(policy.base_delay * (1LL << (attempt - 1)));
    }
    try {
      last = client.call(request);
    } catch (const std::exception& e) {
      last = {Status::Retryable, nlohmann::json::object(), e.what()};
    }
    if (last.status != Status::Retryable) return last;
  }
  return last;
}

namespace {

ClientResponse call_ok(ModelClient& client, const ClientRequest& request,
                       const RetryPolicy& policy) {
  auto res = call_with_retry(client, request, policy);
  if (res.status == Status::Fatal) {
    fail(ErrorCode::ClientFatal,
         std::string(to_string(request.kind)) + " failed: " + res.error);
  }
  if (res.status == Status::Retryable) {
    fail(ErrorCode::ClientRetryExhausted,
         std::string(to_string(request.kind)) + " retries exhausted: " + res.error);
  }
  return res;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::vector<float> vector_body(const ClientResponse& res, const char* what) {
  try {
    return res.body.at("vector").get<std::vector<float>>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorCode::Protocol, std::string(what) + " response lacks a numeric vector");
  }
}

constexpr int kMaxPromptRounds = 4;

}  // namespace

bool mentions_concept(const std::string& text, const std::string& concept_name) {
  if (concept_name.empty()) return false;
  return lower(text).find(lower(concept_name)) != std::string::npos;
}

PromptProposal propose_prompts(const std::string& concept_name, PromptKind kind, std::size_t n,
                               ModelClient& client, const RetryPolicy& policy,
                               const std::string& context) {
  require(n >= 1, "n must be at least 1");
  PromptProposal out;
  for (int round = 0; round < kMaxPromptRounds && out.prompts.size() < n; ++round) {
    std::size_t missing = n - out.prompts.size();
    auto req = make_request(RequestKind::ProposePrompts, {{"concept", concept_name},
                                                          {"kind", to_string(kind)},
                                                          {"n", missing},
                                                          {"context", context},
                                                          {"round", round}});
    auto res = call_ok(client, req, policy);
    std::vector<std::string> got;
    try {
      got = res.body.at("prompts").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception&) {
      fail(ErrorCode::Protocol, "propose response lacks a prompt list");
    }
    for (auto& p : got) {
      if (out.prompts.size() == n) break;
      if (kind != PromptKind::Positive && mentions_concept(p, concept_name)) {
        out.dropped.push_back(std::move(p));
      } else {
        out.prompts.push_back(std::move(p));
      }
    }
  }
  if (out.prompts.size() < n) {
    fail(ErrorCode::ClientFatal, "could not obtain " + std::to_string(n) + " valid " +
                                     to_string(kind) + " prompts for '" + concept_name + "'");
  }
  return out;
}

VerifyOutcome verify(const std::string& image_ref, const std::string& concept_name,
                     ModelClient& client, const RetryPolicy& policy) {
  auto req = make_request(RequestKind::Verify, {{"image_ref", image_ref}, {"concept", concept_name}});
  auto res = call_with_retry(client, req, policy);
  if (res.status != Status::Ok) return VerifyOutcome::Unverified;
  auto it = res.body.find("answer");
  if (it == res.body.end() || !it->is_string()) return VerifyOutcome::Unverified;
  const auto& answer = it->get_ref<const std::string&>();
  if (answer == "yes") return VerifyOutcome::Present;
  if (answer == "no") return VerifyOutcome::Absent;
  return VerifyOutcome::Unverified;
}

std::vector<float> encode(const std::string& image_ref, std::size_t expected_dim,
                          ModelClient& client, const RetryPolicy& policy) {
  auto res = call_ok(client, make_request(RequestKind::Encode, {{"image_ref", image_ref}}), policy);
  auto v = vector_body(res, "encode");
  if (v.size() != expected_dim) {
    fail(ErrorCode::Protocol, "encode returned " + std::to_string(v.size()) +
                                  " values, expected " + std::to_string(expected_dim));
  }
  for (float x : v) {
    if (!std::isfinite(x)) fail(ErrorCode::Protocol, "encode returned a non-finite value");
  }
  return v;
}

std::vector<float> embed(const std::string& text_or_ref, bool is_image, ModelClient& client,
                         const RetryPolicy& policy) {
  auto res = call_ok(client,
                     make_request(RequestKind::Embed, {{"text", text_or_ref}, {"is_image", is_image}}),
                     policy);
  auto v = vector_body(res, "embed");
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  if (v.empty() || std::abs(std::sqrt(sq) - 1.0) > 1e-5) {
    fail(ErrorCode::Protocol, "embed returned a vector that is not unit norm");
  }
  return v;
}

std::string generate_image(const std::string& prompt, const GenerationContext& ctx,
                           ModelClient& client, const RetryPolicy& policy) {
  auto res = call_ok(client,
                     make_request(RequestKind::GenerateImage, {{"prompt", prompt},
                                                               {"concept", ctx.concept_name},
                                                               {"role", ctx.role},
                                                               {"counter_concept", ctx.counter_concept},
                                                               {"item_key", ctx.item_key}}),
                     policy);
  auto it = res.body.find("image_ref");
  if (it == res.body.end() || !it->is_string()) fail(ErrorCode::Protocol, "generate response lacks image_ref");
  return it->get<std::string>();
}

std::string edit_image(const std::string& image_ref, const std::string& instruction,
                       const std::string& concept_name, const std::string& item_key,
                       ModelClient& client, const RetryPolicy& policy) {
  auto res = call_ok(client,
                     make_request(RequestKind::EditImage, {{"image_ref", image_ref},
                                                           {"instruction", instruction},
                                                           {"concept", concept_name},
                                                           {"item_key", item_key}}),
                     policy);
  auto it = res.body.find("image_ref");
  if (it == res.body.end() || !it->is_string()) fail(ErrorCode::Protocol, "edit response lacks image_ref");
  return it->get<std::string>();
}

// --- stub --------------------------------------------------------------------

namespace {

constexpr std::array<const char*, 12> kStubScenes = {
    "harbor", "meadow", "kitchen", "street", "forest", "desert",
    "library", "stadium", "garden", "market", "bridge", "canyon"};

// Refs look like "stub://<kind>/<hash>?concepts=a|b".
std::vector<std::string> ref_concepts(const std::string& ref) {
  std::vector<std::string> out;
  auto pos = ref.find("?concepts=");
  if (pos == std::string::npos) return out;
  std::string rest = ref.substr(pos + 10);
  std::size_t start = 0;
  while (start <= rest.size()) {
    auto bar = rest.find('|', start);
    std::string item = rest.substr(start, bar == std::string::npos ? std::string::npos : bar - start);
    if (!item.empty()) out.push_back(item);
    if (bar == std::string::npos) break;
    start = bar + 1;
  }
  return out;
}

std::string make_ref(const char* kind, std::uint64_t h, const std::vector<std::string>& concepts) {
  std::string ref = std::string("stub://") + kind + "/" + hex64(h) + "?concepts=";
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    if (i) ref += '|';
    ref += concepts[i];
  }
  return ref;
}

}  // namespace

StubClient::StubClient(StubOptions options) : options_(std::move(options)) {}

ClientResponse StubClient::call(const ClientRequest& req) {
  calls_.fetch_add(1);
  if (options_.fatal_kinds.count(req.kind)) {
    return {Status::Fatal, nlohmann::json::object(), "stub: fatal"};
  }
  if (options_.retryable_kinds.count(req.kind)) {
    return {Status::Retryable, nlohmann::json::object(), "stub: timeout"};
  }
  const auto& p = req.payload;
  const std::uint64_t h = mix_seed(options_.seed, req.idempotency_key);
  ClientResponse res;
  switch (req.kind) {
    case RequestKind::ProposePrompts: {
      auto concept_name = p.value("concept", "");
      auto kind = p.value("kind", "");
      auto context = p.value("context", "");
      auto n = p.value("n", std::size_t{0});
      int round = p.value("round", 0);
      std::vector<std::string> prompts;
      for (std::size_t i = 0; i < n; ++i) {
        std::string tag = std::to_string(round) + "." + std::to_string(i);
        if (options_.leak_target_in_first_batch && round == 0 && i == 0 && kind != "Positive") {
          prompts.push_back("a scene featuring " + concept_name + " " + tag);
        } else if (kind == "Positive") {
          prompts.push_back("a photo of " + concept_name + ", variation " + tag);
        } else if (kind == "CounterConcept") {
          prompts.push_back(std::string(kStubScenes[(round * 7 + i) % kStubScenes.size()]) + " " + tag);
        } else if (kind == "NegativePrompt") {
          prompts.push_back("a photo of " + context + ", variation " + tag);
        } else {
          prompts.push_back("replace the main subject with background, variant " + tag);
        }
      }
      res.body = {{"prompts", prompts}};
      break;
    }
    case RequestKind::GenerateImage: {
      std::string depicted = p.value("role", "") == "SemanticNegative"
                                 ? p.value("counter_concept", "")
                                 : p.value("concept", "");
      res.body = {{"image_ref", make_ref("gen", h, {depicted})}};
      break;
    }
    case RequestKind::EditImage: {
      auto concepts = ref_concepts(p.value("image_ref", ""));
      auto target = p.value("concept", "");
      concepts.erase(std::remove(concepts.begin(), concepts.end(), target), concepts.end());
      res.body = {{"image_ref", make_ref("edit", h, concepts)}};
      break;
    }
    case RequestKind::Verify: {
      auto ref = p.value("image_ref", "");
      auto concept_name = p.value("concept", "");
      std::string answer;
      if (options_.verify_answer) {
        answer = options_.verify_answer(ref, concept_name);
      } else {
        auto cs = ref_concepts(ref);
        answer = std::find(cs.begin(), cs.end(), concept_name) != cs.end() ? "yes" : "no";
      }
      if (answer != "yes" && answer != "no") {
        return {Status::Retryable, nlohmann::json::object(), "stub: verifier timeout"};
      }
      res.body = {{"answer", answer}};
      break;
    }
    case RequestKind::Encode: {
      auto rng = Rng::stream(options_.seed, "encode:" + p.value("image_ref", ""));
      long n = static_cast<long>(options_.voxel_dim) + options_.encode_length_delta;
      std::vector<float> v(static_cast<std::size_t>(std::max(0L, n)));
      for (auto& x : v) x = static_cast<float>(rng.normal());
      res.body = {{"vector", v}};
      break;
    }
    case RequestKind::Embed: {
      auto rng = Rng::stream(options_.seed, "embed:" + p.value("text", ""));
      std::vector<float> v(options_.embed_dim);
      double sq = 0.0;
      for (auto& x : v) {
        x = static_cast<float>(rng.normal());
        sq += static_cast<double>(x) * x;
      }
      for (auto& x : v) x = static_cast<float>(x / std::sqrt(sq));
      res.body = {{"vector", v}};
      break;
    }
  }
  return res;
}

// --- HTTP --------------------------------------------------------------------

HttpClient::HttpClient(std::string base_url, std::chrono::milliseconds timeout)
    : base_url_(std::move(base_url)), timeout_(timeout) {}

ClientResponse HttpClient::call(const ClientRequest& request) {
  httplib::Client cli(base_url_);
  auto secs = timeout_.count() / 1000;
  auto usecs = (timeout_.count() % 1000) * 1000;
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  cli.set_tcp_nodelay(true);
  httplib::Headers headers = {{"Idempotency-Key", request.idempotency_key}};
  auto res = cli.Post(endpoint_for(request.kind), headers, request_to_wire(request).dump(),
                      "application/json");
  if (!res) {
    return {Status::Retryable, nlohmann::json::object(),
            "transport error: " + httplib::to_string(res.error())};
  }
  if (res->status == 429 || res->status >= 500) {
    return {Status::Retryable, nlohmann::json::object(), "http " + std::to_string(res->status)};
  }
  if (res->status != 200) {
    return {Status::Fatal, nlohmann::json::object(), "http " + std::to_string(res->status)};
  }
  try {
    return response_from_wire(nlohmann::json::parse(res->body));
  } catch (const std::exception& e) {
    return {Status::Fatal, nlohmann::json::object(), std::string("malformed response: ") + e.what()};
  }
}

struct LoopbackServer::Impl {
  ModelClient& backend;
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::mutex mutex;
  std::unordered_map<std::string, ClientResponse> completed;
  std::atomic<std::size_t> backend_calls{0};

  explicit Impl(ModelClient& b) : backend(b) { server.set_tcp_nodelay(true); }
};

LoopbackServer::LoopbackServer(ModelClient& backend) : impl_(std::make_unique<Impl>(backend)) {
  auto* impl = impl_.get();
  auto handler = [impl](const httplib::Request& http_req, httplib::Response& http_res) {
    auto kind = kind_for_endpoint(http_req.path);
    if (!kind) {
      http_res.status = 404;
      return;
    }
    ClientRequest req;
    try {
      req = request_from_wire(nlohmann::json::parse(http_req.body), *kind);
    } catch (const std::exception& e) {
      http_res.status = 400;
      http_res.set_content(e.what(), "text/plain");
      return;
    }
    {
      std::lock_guard lock(impl->mutex);
      auto it = impl->completed.find(req.idempotency_key);
      if (it != impl->completed.end()) {
        http_res.set_content(response_to_wire(it->second).dump(), "application/json");
        return;
      }
    }
    impl->backend_calls.fetch_add(1);
    ClientResponse res;
    try {
      res = impl->backend.call(req);
    } catch (const std::exception& e) {
      res = {Status::Retryable, nlohmann::json::object(), e.what()};
    }
    if (res.status == Status::Ok) {
      std::lock_guard lock(impl->mutex);
      impl->completed.emplace(req.idempotency_key, res);
    }
    http_res.set_content(response_to_wire(res).dump(), "application/json");
  };
  for (auto k : {RequestKind::ProposePrompts, RequestKind::GenerateImage, RequestKind::EditImage,
                 RequestKind::Verify, RequestKind::Encode, RequestKind::Embed}) {
    impl->server.Post(endpoint_for(k), handler);
  }
  impl->port = impl->server.bind_to_any_port("127.0.0.1");
  if (impl->port < 0) fail(ErrorCode::Io, "loopback server could not bind");
  impl->thread = std::thread([impl] { impl->server.listen_after_bind(); });
  impl->server.wait_until_ready();
}

LoopbackServer::~LoopbackServer() { stop(); }

void LoopbackServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int LoopbackServer::port() const { return impl_->port; }

std::string LoopbackServer::base_url() const {
  return "http://127.0.0.1:" + std::to_string(impl_->port);
}

std::size_t LoopbackServer::backend_calls() const { return impl_->backend_calls.load(); }

}  // namespace causeloc
