#pragma once

// HTTP backend for OpenAI-compatible chat-completion servers.
//
// Scoring modes (profile `scoring` object):
//   {"mode": "logprobs", "top_logprobs": 5}   rating distribution from the
//       top log-probabilities of the last rating token in the reply
//   {"mode": "sampling", "samples": 10}       empirical distribution of the
//       last rating over n sampled replies

#include <cmath>
#include <cstdlib>
#include <string>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "pivot/gateway.hpp"

namespace pivot {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // base path without trailing slash
};

inline Endpoint parse_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("endpoint '" + url + "' has no scheme");
  const auto slash = url.find('/', scheme + 3);
  Endpoint e;
  e.origin = url.substr(0, slash);
  e.path = slash == std::string::npos ? "" : url.substr(slash);
  while (!e.path.empty() && e.path.back() == '/') e.path.pop_back();
  return e;
}

// Index of the last rating digit (1-3) token in a logprobs content array.
inline std::optional<std::size_t> last_rating_token(const json& content) {
  for (std::size_t i = content.size(); i-- > 0;) {
    const auto tok = trim(content[i].value("token", ""));
    if (tok == "1" || tok == "2" || tok == "3") return i;
  }
  return std::nullopt;
}

inline ScoreDistribution distribution_from_logprobs(const json& token_entry) {
  double mass[3] = {0.0, 0.0, 0.0};
  auto add = [&](const json& t) {
    const auto tok = trim(t.value("token", ""));
    if (tok == "1" || tok == "2" || tok == "3")
      mass[tok[0] - '1'] = std::max(mass[tok[0] - '1'], std::exp(t.value("logprob", -1e9)));
  };
  add(token_entry);
  for (const auto& t : token_entry.value("top_logprobs", json::array())) add(t);
  const double total = mass[0] + mass[1] + mass[2];
  if (total <= 0.0) throw TransportError("no probability mass on ratings 1-3");
  return ScoreDistribution::make(mass[0] / total, mass[1] / total, mass[2] / total);
}

inline std::optional<int> last_rating_in_text(std::string_view text) {
  for (std::size_t i = text.size(); i-- > 0;) {
    const char c = text[i];
    if (c < '1' || c > '3') continue;
    const bool left = i == 0 || !std::isdigit(static_cast<unsigned char>(text[i - 1]));
    const bool right = i + 1 == text.size() || !std::isdigit(static_cast<unsigned char>(text[i + 1]));
    if (left && right) return c - '0';
  }
  return std::nullopt;
}

class RemoteBackend final : public Backend {
 public:
  explicit RemoteBackend(BackendProfile profile) : profile_(std::move(profile)) {
    if (profile_.endpoint.empty()) throw ConfigError("remote profile '" + profile_.name + "' needs an endpoint");
    if (profile_.model.empty()) throw ConfigError("remote profile '" + profile_.name + "' needs a model");
    endpoint_ = parse_endpoint(profile_.endpoint);
    if (!profile_.api_key_env.empty()) {
      const char* key = std::getenv(profile_.api_key_env.c_str());
      if (!key || !*key)
        throw ConfigError("environment variable " + profile_.api_key_env + " is not set");
      api_key_ = key;
    }
    mode_ = profile_.scoring.value("mode", "logprobs");
    if (mode_ != "logprobs" && mode_ != "sampling")
      throw ConfigError("unknown scoring mode '" + mode_ + "'");
  }

  bool can_generate() const override { return true; }
  bool can_score() const override { return true; }

  std::string generate(std::string_view prompt, const CallOptions& opts) override {
    json body = request(prompt, opts);
    const json reply = post(body);
    return message_text(reply, 0);
  }

  ScoreDistribution score(std::string_view prompt, const CallOptions& opts) override {
    json body = request(prompt, opts);
    if (mode_ == "logprobs") {
      body["logprobs"] = true;
      body["top_logprobs"] = profile_.scoring.value("top_logprobs", 5);
      const json reply = post(body);
      try {
        const auto& content = reply.at("choices").at(0).at("logprobs").at("content");
        const auto idx = last_rating_token(content);
        if (!idx) throw TransportError("reply has no rating token");
        return distribution_from_logprobs(content[*idx]);
      } catch (const json::exception& e) {
        throw TransportError(std::string("malformed logprobs reply: ") + e.what());
      }
    }
    const int n = profile_.scoring.value("samples", 10);
    if (n < 1) throw ConfigError("sampling needs at least one sample");
    body["n"] = n;
    const json reply = post(body);
    double counts[3] = {0, 0, 0};
    int used = 0;
    const auto choices = reply.value("choices", json::array());
    for (std::size_t i = 0; i < choices.size(); ++i)
      if (auto r = last_rating_in_text(message_text(reply, i))) {
        counts[*r - 1] += 1;
        ++used;
      }
    if (used == 0) throw TransportError("no sampled reply carried a rating");
    return ScoreDistribution::make(counts[0] / used, counts[1] / used, counts[2] / used);
  }

 private:
  json request(std::string_view prompt, const CallOptions& opts) const {
    json body = profile_.options.is_object() ? profile_.options : json::object();
    body["model"] = profile_.model;
    body["messages"] = json::array({json{{"role", "user"}, {"content", std::string(prompt)}}});
    if (!body.contains("seed")) body["seed"] = opts.seed;
    return body;
  }

  json post(const json& body) const {
    httplib::Client cli(endpoint_.origin);
    cli.set_connection_timeout(profile_.scoring.value("connect_timeout_s", 10), 0);
    cli.set_read_timeout(profile_.scoring.value("read_timeout_s", 120), 0);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = cli.Post(endpoint_.path + "/chat/completions", headers, body.dump(),
                        "application/json");
    if (!res)
      throw TransportError("request to " + profile_.endpoint + " failed: " +
                           httplib::to_string(res.error()));
    if (res->status != 200)
      throw TransportError("backend '" + profile_.name + "' returned HTTP " +
                           std::to_string(res->status));
    try {
      return json::parse(res->body);
    } catch (const json::exception& e) {
      throw TransportError(std::string("malformed reply body: ") + e.what());
    }
  }

  static std::string message_text(const json& reply, std::size_t i) {
    try {
      const auto& content = reply.at("choices").at(i).at("message").at("content");
      if (!content.is_string()) throw TransportError("reply content is not text");
      return content.get<std::string>();
    } catch (const json::exception& e) {
      throw TransportError(std::string("malformed completion reply: ") + e.what());
    }
  }

  BackendProfile profile_;
  Endpoint endpoint_;
  std::string api_key_;
  std::string mode_;
};

}  // namespace pivot
