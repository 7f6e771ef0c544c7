#ifndef EMO_REMOTE_HPP
#define EMO_REMOTE_HPP

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "emo/errors.hpp"
#include "emo/lm.hpp"

namespace emo {

// Wire protocol: HTTP POST /score with {"texts": [...]} returning
// {"log_probs": [...]} of equal length. Non-200 or a length mismatch is a
// protocol error.

struct RemoteOptions {
  std::string endpoint;  // "http://host:port" or "host:port"
  std::size_t max_batch = 64;
  int retries = 3;       // attempts per wire request
  int backoff_ms = 100;  // doubled after each failed attempt
  int timeout_s = 10;
  int max_inflight = 1;  // concurrent wire requests
};

// Carries the input indices the failed wire request covered.
class RemoteScoreError : public Error {
 public:
  RemoteScoreError(ErrorCode code, std::string msg, std::size_t first,
                   std::size_t last)
      : Error(code, msg + " (inputs [" + std::to_string(first) + "," +
                        std::to_string(last) + "))"),
        first_(first),
        last_(last) {}
  std::size_t first_index() const { return first_; }
  std::size_t last_index() const { return last_; }  // exclusive

 private:
  std::size_t first_, last_;
};

class RemoteScorer {
 public:
  explicit RemoteScorer(RemoteOptions opts);

  // One log-prob per text, order preserved; inputs are split into wire
  // batches of at most max_batch.
  std::vector<double> score_texts(const std::vector<std::string>& texts) const;

  const RemoteOptions& options() const { return opts_; }

 private:
  void score_one_batch(const std::vector<std::string>& texts,
                       std::size_t first, std::size_t last,
                       std::vector<double>& out) const;
  RemoteOptions opts_;
  std::string host_;
  int port_ = 0;
};

std::vector<double> remote_score(const RemoteOptions& opts,
                                 const std::vector<std::string>& texts);

// LM backend over the wire; tokens are joined with single spaces.
class RemoteLM : public LanguageModel {
 public:
  explicit RemoteLM(RemoteOptions opts) : scorer_(std::move(opts)) {}

  double score(std::span<const std::string> tokens) const override;
  std::vector<double> score_batch(
      const std::vector<std::vector<std::string>>& batch,
      Exec exec = default_exec()) const override;
  std::unique_ptr<LanguageModel> continued(
      const std::vector<std::vector<std::string>>&, double) const override;
  std::string backend_name() const override { return "remote"; }
  uint64_t vocabulary_hash() const override { return 0; }
  void save(const std::string&) const override;

 private:
  RemoteScorer scorer_;
};

// In-process protocol server; serves the handler on /score. Used by the
// serve-stub command and the wire tests.
class ScoreServer {
 public:
  using Handler =
      std::function<std::vector<double>(const std::vector<std::string>&)>;

  explicit ScoreServer(Handler handler);
  ~ScoreServer();

  // Binds the port (0 picks a free one), serves in a background thread,
  // returns the bound port.
  int start(int port);
  void wait();  // blocks until stop() (foreground serving)
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace emo

#endif
