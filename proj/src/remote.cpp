#include "emo/remote.hpp"

#include <atomic>
#include <chrono>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace emo {

using nlohmann::json;

RemoteScorer::RemoteScorer(RemoteOptions opts) : opts_(std::move(opts)) {
  std::string ep = opts_.endpoint;
  if (ep.rfind("https://", 0) == 0)
    throw Error(ErrorCode::Config, "https endpoints are not supported");
  if (ep.rfind("http://", 0) == 0) ep = ep.substr(7);
  const std::size_t colon = ep.rfind(':');
  if (colon == std::string::npos)
    throw Error(ErrorCode::Config,
                "endpoint must be host:port, got '" + opts_.endpoint + "'");
  host_ = ep.substr(0, colon);
  try {
    port_ = std::stoi(ep.substr(colon + 1));
  } catch (...) {
    throw Error(ErrorCode::Config, "bad port in endpoint '" + opts_.endpoint + "'");
  }
  if (opts_.max_batch == 0)
    throw Error(ErrorCode::Config, "max_batch must be positive");
}

void RemoteScorer::score_one_batch(const std::vector<std::string>& texts,
                                   std::size_t first, std::size_t last,
                                   std::vector<double>& out) const {
  json body;
  body["texts"] = json::array();
  for (std::size_t i = first; i < last; ++i) body["texts"].push_back(texts[i]);
  const std::string payload = body.dump();

  std::string last_problem = "no attempts made";
  ErrorCode last_code = ErrorCode::Connect;
  int backoff = opts_.backoff_ms;
  for (int attempt = 0; attempt < std::max(1, opts_.retries); ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
      backoff *= 2;
    }
    httplib::Client client(host_, port_);
    client.set_connection_timeout(opts_.timeout_s, 0);
    client.set_read_timeout(opts_.timeout_s, 0);
    auto res = client.Post("/score", payload, "application/json");
    if (!res) {
      last_code = ErrorCode::Connect;
      last_problem = "connection failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_code = ErrorCode::Protocol;
      last_problem = "status " + std::to_string(res->status);
      continue;
    }
    json reply;
    try {
      reply = json::parse(res->body);
    } catch (const std::exception& e) {
      last_code = ErrorCode::Protocol;
      last_problem = std::string("bad JSON: ") + e.what();
      continue;
    }
    if (!reply.contains("log_probs") || !reply["log_probs"].is_array() ||
        reply["log_probs"].size() != last - first) {
      last_code = ErrorCode::Protocol;
      last_problem = "log_probs missing or wrong length";
      continue;
    }
    for (std::size_t i = first; i < last; ++i)
      out[i] = reply["log_probs"][i - first].get<double>();
    return;
  }
  throw RemoteScoreError(last_code,
                         "scoring failed after " +
                             std::to_string(std::max(1, opts_.retries)) +
                             " attempts: " + last_problem,
                         first, last);
}

std::vector<double> RemoteScorer::score_texts(
    const std::vector<std::string>& texts) const {
  if (texts.empty()) throw Error(ErrorCode::EmptyInput, "empty batch");
  std::vector<double> out(texts.size());
  std::vector<std::pair<std::size_t, std::size_t>> batches;
  for (std::size_t first = 0; first < texts.size(); first += opts_.max_batch)
    batches.emplace_back(first,
                         std::min(texts.size(), first + opts_.max_batch));

  if (opts_.max_inflight <= 1 || batches.size() == 1) {
    for (const auto& [first, last] : batches)
      score_one_batch(texts, first, last, out);
    return out;
  }

  // Bounded in-flight wire requests; slots keep the output order.
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  const std::size_t nthreads =
      std::min<std::size_t>(opts_.max_inflight, batches.size());
  std::vector<std::thread> workers;
  workers.reserve(nthreads);
  for (std::size_t w = 0; w < nthreads; ++w) {
    workers.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= batches.size()) return;
        try {
          score_one_batch(texts, batches[i].first, batches[i].second, out);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

std::vector<double> remote_score(const RemoteOptions& opts,
                                 const std::vector<std::string>& texts) {
  return RemoteScorer(opts).score_texts(texts);
}

namespace {
std::string join_tokens(std::span<const std::string> tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}
}  // namespace

double RemoteLM::score(std::span<const std::string> tokens) const {
  if (tokens.empty()) throw Error(ErrorCode::EmptyInput, "empty sentence");
  return scorer_.score_texts({join_tokens(tokens)})[0];
}

std::vector<double> RemoteLM::score_batch(
    const std::vector<std::vector<std::string>>& batch, Exec) const {
  std::vector<std::string> texts;
  texts.reserve(batch.size());
  for (const auto& tokens : batch) texts.push_back(join_tokens(tokens));
  return scorer_.score_texts(texts);
}

std::unique_ptr<LanguageModel> RemoteLM::continued(
    const std::vector<std::vector<std::string>>&, double) const {
  throw Error(ErrorCode::Config, "remote backend cannot be retrained locally");
}

void RemoteLM::save(const std::string&) const {
  throw Error(ErrorCode::Config, "remote backend has no local serialization");
}

struct ScoreServer::Impl {
  Handler handler;
  httplib::Server svr;
  std::thread thread;
  int port = 0;
};

ScoreServer::ScoreServer(Handler handler) : impl_(new Impl) {
  impl_->handler = std::move(handler);
  impl_->svr.Post("/score", [this](const httplib::Request& req,
                                   httplib::Response& res) {
    json reply;
    try {
      const json body = json::parse(req.body);
      if (!body.contains("texts") || !body["texts"].is_array()) {
        res.status = 400;
        res.set_content("{\"error\":\"texts array required\"}",
                        "application/json");
        return;
      }
      std::vector<std::string> texts;
      for (const auto& t : body["texts"]) texts.push_back(t.get<std::string>());
      const std::vector<double> scores = impl_->handler(texts);
      reply["log_probs"] = scores;
      res.set_content(reply.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 500;
      reply["error"] = e.what();
      res.set_content(reply.dump(), "application/json");
    }
  });
}

ScoreServer::~ScoreServer() { stop(); }

int ScoreServer::start(int port) {
  if (port == 0) {
    impl_->port = impl_->svr.bind_to_any_port("127.0.0.1");
  } else {
    if (!impl_->svr.bind_to_port("127.0.0.1", port))
      throw Error(ErrorCode::Connect,
                  "cannot bind port " + std::to_string(port));
    impl_->port = port;
  }
  impl_->thread = std::thread([this] { impl_->svr.listen_after_bind(); });
  impl_->svr.wait_until_ready();
  return impl_->port;
}

void ScoreServer::wait() {
  if (impl_->thread.joinable()) impl_->thread.join();
}

void ScoreServer::stop() {
  if (impl_->svr.is_running()) impl_->svr.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace emo
