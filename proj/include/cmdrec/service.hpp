#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cmdrec/preprocess.hpp"
#include "cmdrec/training.hpp"

namespace cmdrec {

using Clock = std::chrono::steady_clock;
using WarningSink = std::function<void(const std::string&)>;

// Writes "warning: ..." to stderr.
void default_warning(const std::string& msg);

struct ServiceOptions {
  std::chrono::milliseconds poll_interval{500};
  std::chrono::seconds idle_timeout{1800};
  std::size_t max_len = 100;
  int default_k = 5;
  std::chrono::milliseconds max_backoff{8000};
};

// Follows a growing file. Only complete lines are returned; a trailing
// partial line waits for its newline.
class LogTailer {
 public:
  explicit LogTailer(std::filesystem::path path, std::uint64_t offset = 0, WarningSink warn = default_warning);

  // Lines appended since the last call. A file shorter than the read offset
  // was truncated: the offset resets to 0 with a warning. Throws
  // Error(IoError) when the file is missing or unreadable.
  std::vector<std::string> poll();

  // End of the last complete line handed out; resuming from it never
  // duplicates or loses a line.
  std::uint64_t offset() const { return read_offset_ - partial_.size(); }
  std::size_t truncations() const { return truncations_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::uint64_t read_offset_;
  std::string partial_;
  std::size_t truncations_ = 0;
  WarningSink warn_;
};

// Per-session incremental pipeline state.
struct SessionState {
  std::string session_id;
  AbortFilter aborts;
  UndoRedoResolver resolver;
  CleanSequence buffer;  // last max_len cleaned items
  std::size_t records = 0;
  Clock::time_point last_update = Clock::now();
};

// Runs filter -> undo/redo -> align -> drop ambiguous -> substitute over
// records as they arrive. The buffer always equals the tail of the batch
// pipeline run on the whole prefix seen so far.
class OnlinePreprocessor {
 public:
  OnlinePreprocessor() = default;
  OnlinePreprocessor(PipelineConfig config, TriggerMap trigger_map, std::size_t max_len = 100);

  void apply(SessionState& state, const std::vector<TimedEvent>& records) const;
  std::size_t max_len() const { return max_len_; }
  const PipelineConfig& config() const { return config_; }
  const TriggerMap& trigger_map() const { return trigger_map_; }

 private:
  PipelineConfig config_;
  TriggerMap trigger_map_;
  std::size_t max_len_ = 100;
};

// Thread-safe map of live sessions.
class SessionStore {
 public:
  explicit SessionStore(OnlinePreprocessor pre = {}) : pre_(std::move(pre)) {}

  // Records in arrival order, possibly from several sessions.
  void ingest(const std::vector<std::pair<std::string, TimedEvent>>& records);
  std::optional<CleanSequence> buffer(const std::string& session_id) const;
  std::vector<std::string> session_ids() const;
  std::size_t size() const;
  // Drops sessions idle since before `now - timeout`; returns how many.
  std::size_t evict_idle(Clock::time_point now, std::chrono::seconds timeout);

 private:
  OnlinePreprocessor pre_;
  mutable std::mutex mu_;
  std::map<std::string, SessionState> sessions_;
};

struct PredictRequest {
  std::optional<std::string> session_id;
  std::vector<std::string> prefix;  // command names; used when no session id
  int k = 5;

  static PredictRequest from_json_text(const std::string& text, int default_k = 5);
  std::string to_json_text() const;
};

struct PredictionItem {
  int id = 0;
  std::string name;
  Category category = Category::Undo;
  std::int64_t loc_id = 0;
  double score = 0.0;  // softmax probability over the vocabulary
};

struct PredictResponse {
  std::vector<PredictionItem> items;
  std::string model_tag;
  double latency_ms = 0.0;
  std::size_t context_length = 0;
  std::size_t unknown = 0;  // context items outside the vocabulary
  bool clamped = false;

  std::string to_json_text() const;
  static PredictResponse from_json_text(const std::string& text);
};

// Immutable trained model plus its encoder; safe for concurrent predicts.
class Recommender {
 public:
  Recommender(LoadedRun run, std::string tag);

  PredictResponse predict(const CleanSequence& context, int k) const;
  // Names are resolved through the vocabulary; unknown names encode as UNK.
  CleanSequence context_from_names(const std::vector<std::string>& names) const;

  const std::string& tag() const { return tag_; }
  const Vocabulary& vocab() const { return run_.encoder.vocab; }
  const Model& model() const { return run_.model; }

 private:
  LoadedRun run_;
  std::string tag_;
};

// Errors: UnknownSession, EmptyPrefix, ModelNotLoaded, InvalidConfig (k < 1).
PredictResponse handle_predict(const PredictRequest& request, const Recommender* model, const SessionStore& store);

// HTTP status for an error code (404, 400, 503, 500).
int http_status(ErrorCode code);

// Turns tailed lines into (session, event) records.
std::vector<std::pair<std::string, TimedEvent>> decode_lines(const std::vector<std::string>& lines,
                                                             LineDecoder& decoder);

// Pollers plus an HTTP front end: POST /predict, GET /health, GET /vocab,
// GET /session/{id}.
class Service {
 public:
  Service(std::shared_ptr<const Recommender> model, OnlinePreprocessor pre, ServiceOptions options = {},
          WarningSink warn = default_warning);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // One poller thread per file. Call before start().
  void watch(const std::filesystem::path& log_file);
  // Binds and serves in the background; port 0 picks a free port. Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Blocks until stop() is called from elsewhere.
  void wait();
  void stop();

  // One synchronous poll over every watched file (used by tests).
  void poll_once();

  SessionStore& store() { return store_; }
  int port() const { return port_; }

 private:
  struct Watch;
  void poll_watch(Watch& w);
  void poller_loop(Watch& w);

  std::shared_ptr<const Recommender> model_;
  SessionStore store_;
  ServiceOptions options_;
  WarningSink warn_;
  std::vector<std::unique_ptr<Watch>> watches_;
  std::vector<std::thread> threads_;
  std::mutex stop_mu_;
  std::condition_variable stop_cv_;
  std::atomic<bool> stopping_{false};
  int port_ = 0;
  struct Http;
  std::unique_ptr<Http> http_;
};

// Listen port from CMDREC_PORT, else `fallback`.
int port_from_env(int fallback = 8080);

}  // namespace cmdrec
