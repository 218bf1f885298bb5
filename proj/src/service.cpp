#include "cmdrec/service.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "httplib.h"
#include "json.hpp"

namespace cmdrec {

using nlohmann::json;

void default_warning(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

// ---------------------------------------------------------------------------

LogTailer::LogTailer(std::filesystem::path path, std::uint64_t offset, WarningSink warn)
    : path_(std::move(path)), read_offset_(offset), warn_(std::move(warn)) {}

std::vector<std::string> LogTailer::poll() {
  std::error_code ec;
  auto size = std::filesystem::file_size(path_, ec);
  if (ec) throw Error(ErrorCode::IoError, path_.string() + ": " + ec.message());
  if (size < read_offset_) {
    ++truncations_;
    if (warn_) warn_(path_.string() + " shrank from " + std::to_string(read_offset_) + " to " +
                     std::to_string(size) + " bytes; reading from the start");
    read_offset_ = 0;
    partial_.clear();
  }
  std::vector<std::string> lines;
  if (size == read_offset_) return lines;

  std::ifstream in(path_, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path_.string());
  in.seekg(static_cast<std::streamoff>(read_offset_));
  std::string chunk(size - read_offset_, '\0');
  in.read(chunk.data(), static_cast<std::streamsize>(chunk.size()));
  chunk.resize(static_cast<std::size_t>(in.gcount()));
  read_offset_ += chunk.size();

  std::string data = partial_ + chunk;
  std::size_t start = 0;
  for (;;) {
    auto nl = data.find('\n', start);
    if (nl == std::string::npos) break;
    std::string line = data.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = nl + 1;
  }
  partial_ = data.substr(start);
  return lines;
}

// ---------------------------------------------------------------------------

OnlinePreprocessor::OnlinePreprocessor(PipelineConfig config, TriggerMap trigger_map, std::size_t max_len)
    : config_(std::move(config)), trigger_map_(std::move(trigger_map)), max_len_(max_len) {}

void OnlinePreprocessor::apply(SessionState& state, const std::vector<TimedEvent>& records) const {
  if (records.empty()) return;
  std::vector<TimedEvent> passed;
  for (const auto& ev : records) {
    ++state.records;
    if (config_.denylist.match(ev)) continue;
    state.aborts.push(ev, passed);
  }
  for (const auto& ev : passed) state.resolver.push(ev);

  // Records held behind an open Event are final if the session ended now, so
  // they go through a scratch copy of the resolver.
  auto resolver = state.resolver;
  for (const auto& ev : state.aborts.tentative_tail()) resolver.push(ev);
  Session s{state.session_id, resolver.output()};
  s = drop_ambiguous(align_languages(s, config_.lexicon), config_.removal);
  s = substitute_high_level(s, trigger_map_, config_.removal, config_.trigger.lookahead);
  auto clean = to_clean_sequence(s);
  if (clean.items.size() > max_len_)
    clean.items.erase(clean.items.begin(), clean.items.end() - static_cast<std::ptrdiff_t>(max_len_));
  state.buffer = std::move(clean);
  state.last_update = Clock::now();
}

void SessionStore::ingest(const std::vector<std::pair<std::string, TimedEvent>>& records) {
  // Group per session, keeping arrival order inside each.
  std::map<std::string, std::vector<TimedEvent>> grouped;
  for (const auto& [sid, ev] : records) grouped[sid].push_back(ev);
  std::lock_guard lock(mu_);
  for (auto& [sid, evs] : grouped) {
    auto it = sessions_.find(sid);
    if (it == sessions_.end()) {
      it = sessions_.emplace(sid, SessionState{}).first;
      it->second.session_id = sid;
      it->second.buffer.session_id = sid;
    }
    pre_.apply(it->second, evs);
  }
}

std::optional<CleanSequence> SessionStore::buffer(const std::string& session_id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) return std::nullopt;
  return it->second.buffer;
}

std::vector<std::string> SessionStore::session_ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [k, v] : sessions_) out.push_back(k);
  return out;
}

std::size_t SessionStore::size() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

std::size_t SessionStore::evict_idle(Clock::time_point now, std::chrono::seconds timeout) {
  std::lock_guard lock(mu_);
  return std::erase_if(sessions_, [&](const auto& kv) { return now - kv.second.last_update > timeout; });
}

// ---------------------------------------------------------------------------

PredictRequest PredictRequest::from_json_text(const std::string& text, int default_k) {
  PredictRequest r;
  r.k = default_k;
  try {
    auto j = json::parse(text);
    if (!j.is_object()) throw Error(ErrorCode::FormatError, "request must be an object");
    for (const char* key : {"session_id", "session"})
      if (j.contains(key) && !j[key].is_null()) {
        r.session_id = j[key].get<std::string>();
        break;
      }
    if (j.contains("prefix")) r.prefix = j["prefix"].get<std::vector<std::string>>();
    if (j.contains("k")) r.k = j["k"].get<int>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("bad predict request: ") + e.what());
  }
  return r;
}

std::string PredictRequest::to_json_text() const {
  json j{{"k", k}};
  if (session_id) j["session_id"] = *session_id;
  else j["prefix"] = prefix;
  return j.dump();
}

std::string PredictResponse::to_json_text() const {
  json items_j = json::array();
  for (const auto& it : items)
    items_j.push_back({{"id", it.id},
                       {"name", it.name},
                       {"category", std::string(to_string(it.category))},
                       {"loc_id", it.loc_id},
                       {"score", it.score}});
  return json{{"items", items_j},     {"model", model_tag},  {"latency_ms", latency_ms},
              {"context", context_length}, {"unknown", unknown}, {"clamped", clamped}}
      .dump();
}

PredictResponse PredictResponse::from_json_text(const std::string& text) {
  PredictResponse r;
  try {
    auto j = json::parse(text);
    for (const auto& it : j.at("items")) {
      PredictionItem p;
      p.id = it.at("id").get<int>();
      p.name = it.at("name").get<std::string>();
      if (!parse_category(it.at("category").get<std::string>(), p.category))
        throw Error(ErrorCode::FormatError, "bad category");
      p.loc_id = it.at("loc_id").get<std::int64_t>();
      p.score = it.at("score").get<double>();
      r.items.push_back(std::move(p));
    }
    r.model_tag = j.value("model", "");
    r.latency_ms = j.value("latency_ms", 0.0);
    r.context_length = j.value("context", std::size_t{0});
    r.unknown = j.value("unknown", std::size_t{0});
    r.clamped = j.value("clamped", false);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("bad predict response: ") + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------

Recommender::Recommender(LoadedRun run, std::string tag) : run_(std::move(run)), tag_(std::move(tag)) {}

CleanSequence Recommender::context_from_names(const std::vector<std::string>& names) const {
  CleanSequence seq;
  seq.session_id = "prefix";
  for (const auto& n : names) {
    CleanItem item;
    item.name = n;
    if (auto id = vocab().id_by_name(n)) {
      const auto& e = vocab().entry(*id);
      item.category = e.category;
      item.loc_id = e.loc_id;
    }
    seq.items.push_back(std::move(item));
  }
  return seq;
}

PredictResponse Recommender::predict(const CleanSequence& context, int k) const {
  auto t0 = Clock::now();
  if (context.items.empty()) throw Error(ErrorCode::EmptyPrefix, "no context to predict from");
  if (k < 1) throw Error(ErrorCode::InvalidConfig, "k must be >= 1");
  const auto& cfg = run_.model.config();
  const auto scheme = cfg.scheme();
  // MLM appends a MASK slot, so one position less for context.
  std::size_t room = static_cast<std::size_t>(cfg.max_positions) - (scheme == Scheme::MLM ? 1 : 0);
  CleanSequence ctx = context;
  if (ctx.items.size() > room)
    ctx.items.erase(ctx.items.begin(), ctx.items.end() - static_cast<std::ptrdiff_t>(room));

  PredictResponse resp;
  auto enc = run_.encoder.encode(ctx, &resp.unknown);
  auto batch = query_batch({enc}, scheme);
  ag::Mat scores = run_.model.target_scores(batch);
  std::vector<double> row(scores.row(0).data(), scores.row(0).data() + scores.cols());

  double mx = *std::max_element(row.begin() + kNumReserved, row.end());
  double z = 0.0;
  for (std::size_t i = kNumReserved; i < row.size(); ++i) z += std::exp(row[i] - mx);

  auto ranked = top_k(row, static_cast<std::size_t>(k));
  for (const auto& [id, s] : ranked.items) {
    const auto& e = vocab().entry(id);
    resp.items.push_back({id, e.name, e.category, e.loc_id, std::exp(s - mx) / z});
  }
  resp.clamped = ranked.clamped;
  resp.context_length = ctx.items.size();
  resp.model_tag = tag_;
  resp.latency_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  return resp;
}

PredictResponse handle_predict(const PredictRequest& request, const Recommender* model, const SessionStore& store) {
  if (!model) throw Error(ErrorCode::ModelNotLoaded, "no model loaded");
  if (request.k < 1) throw Error(ErrorCode::InvalidConfig, "k must be >= 1");
  if (request.session_id) {
    auto buf = store.buffer(*request.session_id);
    if (!buf) throw Error(ErrorCode::UnknownSession, "no session " + *request.session_id);
    if (buf->items.empty()) throw Error(ErrorCode::EmptyPrefix, "session " + *request.session_id + " has no commands yet");
    return model->predict(*buf, request.k);
  }
  if (request.prefix.empty()) throw Error(ErrorCode::EmptyPrefix, "empty prefix");
  return model->predict(model->context_from_names(request.prefix), request.k);
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownSession: return 404;
    case ErrorCode::EmptyPrefix:
    case ErrorCode::FormatError:
    case ErrorCode::InvalidConfig: return 400;
    case ErrorCode::ModelNotLoaded: return 503;
    default: return 500;
  }
}

std::vector<std::pair<std::string, TimedEvent>> decode_lines(const std::vector<std::string>& lines,
                                                             LineDecoder& decoder) {
  std::vector<std::pair<std::string, TimedEvent>> out;
  for (const auto& l : lines)
    if (auto r = decoder.decode(l)) out.push_back(std::move(*r));
  return out;
}

int port_from_env(int fallback) {
  if (const char* p = std::getenv("CMDREC_PORT")) {
    try {
      int v = std::stoi(p);
      if (v >= 0 && v < 65536) return v;
    } catch (...) {
    }
    default_warning(std::string("ignoring CMDREC_PORT=") + p);
  }
  return fallback;
}

// ---------------------------------------------------------------------------

struct Service::Watch {
  LogTailer tailer;
  LineDecoder decoder;
  std::chrono::milliseconds backoff{0};
  Clock::time_point retry_at{};
};

struct Service::Http {
  httplib::Server server;
};

namespace {

json error_body(const Error& e) { return {{"error", std::string(to_string(e.code()))}, {"message", e.what()}}; }

json clean_json(const CleanSequence& seq) {
  json items = json::array();
  for (const auto& it : seq.items)
    items.push_back({{"name", it.name},
                     {"category", std::string(to_string(it.category))},
                     {"loc_id", it.loc_id},
                     {"dt", it.dt_seconds},
                     {"timestamp", format_timestamp(it.timestamp)}});
  return {{"session_id", seq.session_id}, {"items", items}};
}

}  // namespace

Service::Service(std::shared_ptr<const Recommender> model, OnlinePreprocessor pre, ServiceOptions options,
                 WarningSink warn)
    : model_(std::move(model)),
      store_(std::move(pre)),
      options_(options),
      warn_(std::move(warn)),
      http_(std::make_unique<Http>()) {
  auto& srv = http_->server;
  auto send = [](httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };
  auto fail = [send](httplib::Response& res, const Error& e) { send(res, http_status(e.code()), error_body(e)); };

  srv.Post("/predict", [this, send, fail](const httplib::Request& req, httplib::Response& res) {
    try {
      auto r = PredictRequest::from_json_text(req.body, options_.default_k);
      auto resp = handle_predict(r, model_.get(), store_);
      res.set_content(resp.to_json_text(), "application/json");
    } catch (const Error& e) {
      fail(res, e);
    } catch (const std::exception& e) {
      send(res, 500, {{"error", "Internal"}, {"message", e.what()}});
    }
  });
  srv.Get("/health", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, 200,
         {{"status", "ok"},
          {"model", model_ ? model_->tag() : ""},
          {"model_loaded", model_ != nullptr},
          {"sessions", store_.size()}});
  });
  srv.Get("/vocab", [this, send, fail](const httplib::Request&, httplib::Response& res) {
    if (!model_) return fail(res, Error(ErrorCode::ModelNotLoaded, "no model loaded"));
    json cmds = json::array();
    const auto& v = model_->vocab();
    for (std::size_t i = 0; i < v.command_count(); ++i) {
      const auto& e = v.entries()[i];
      cmds.push_back({{"id", static_cast<int>(i) + kNumReserved},
                      {"name", e.name},
                      {"category", std::string(to_string(e.category))},
                      {"loc_id", e.loc_id}});
    }
    send(res, 200, {{"commands", cmds}, {"size", v.size()}});
  });
  srv.Get(R"(/session/([^/]+))", [this, send, fail](const httplib::Request& req, httplib::Response& res) {
    std::string id = req.matches[1];
    auto buf = store_.buffer(id);
    if (!buf) return fail(res, Error(ErrorCode::UnknownSession, "no session " + id));
    send(res, 200, clean_json(*buf));
  });
  srv.Get("/sessions", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, 200, {{"sessions", store_.session_ids()}});
  });
}

Service::~Service() { stop(); }

void Service::watch(const std::filesystem::path& log_file) {
  watches_.push_back(std::make_unique<Watch>(Watch{LogTailer(log_file, 0, warn_), LineDecoder{}}));
}

void Service::poll_watch(Watch& w) {
  auto now = Clock::now();
  if (now < w.retry_at) return;
  std::vector<std::string> lines;
  try {
    lines = w.tailer.poll();
    w.backoff = std::chrono::milliseconds(0);
  } catch (const Error& e) {
    w.backoff = std::min(options_.max_backoff, std::max(options_.poll_interval, w.backoff * 2));
    w.retry_at = now + w.backoff;
    if (warn_) warn_(std::string(e.what()) + "; retrying in " + std::to_string(w.backoff.count()) + " ms");
    return;
  }
  auto records = decode_lines(lines, w.decoder);
  if (!records.empty()) store_.ingest(records);
}

void Service::poll_once() {
  for (auto& w : watches_) poll_watch(*w);
  store_.evict_idle(Clock::now(), options_.idle_timeout);
}

void Service::poller_loop(Watch& w) {
  while (!stopping_) {
    poll_watch(w);
    store_.evict_idle(Clock::now(), options_.idle_timeout);
    std::unique_lock lock(stop_mu_);
    stop_cv_.wait_for(lock, options_.poll_interval, [this] { return stopping_.load(); });
  }
}

int Service::start(const std::string& host, int port) {
  auto& srv = http_->server;
  if (port == 0)
    port_ = srv.bind_to_any_port(host);
  else
    port_ = srv.bind_to_port(host, port) ? port : -1;
  if (port_ < 0) throw Error(ErrorCode::IoError, "cannot bind " + host + ":" + std::to_string(port));
  for (auto& w : watches_) threads_.emplace_back([this, wp = w.get()] { poller_loop(*wp); });
  threads_.emplace_back([&srv] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  return port_;
}

void Service::wait() {
  std::unique_lock lock(stop_mu_);
  stop_cv_.wait(lock, [this] { return stopping_.load(); });
}

void Service::stop() {
  {
    std::lock_guard lock(stop_mu_);
    if (stopping_ && threads_.empty()) return;
    stopping_ = true;
  }
  stop_cv_.notify_all();
  if (http_) http_->server.stop();
  for (auto& t : threads_)
    if (t.joinable()) t.join();
  threads_.clear();
}

}  // namespace cmdrec
