#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "pointdrag/engine.hpp"
#include "pointdrag/generator.hpp"

namespace pointdrag {

class not_found_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class conflict_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SessionStatus { idle, running, converged, max_steps, aborted, stopped };
std::string to_string(SessionStatus s);

/// One entry of a session's append-only event log. `latent` is the latent
/// the event describes; frames are rendered from it on demand.
struct SessionEvent {
  nlohmann::json payload;
  LatentStack latent;
  bool terminal = false;
};

/// In-memory sessions. Each session runs at most one drag at a time on its
/// own worker thread; every public call is safe from any thread.
class SessionManager {
 public:
  explicit SessionManager(std::shared_ptr<const Generator> generator, EngineConfig defaults = {});
  ~SessionManager();

  SessionManager(const SessionManager&) = delete;
  SessionManager& operator=(const SessionManager&) = delete;

  const Generator& generator() const { return *generator_; }

  /// Body: {"seed": n}, {"latent": <latent document>} or {"session": <export>}.
  nlohmann::json create(const nlohmann::json& body);
  nlohmann::json describe(const std::string& id) const;
  std::vector<std::uint8_t> image_png(const std::string& id) const;

  /// Body: DragSpec fields plus optional "config" overrides. Only idle sessions accept a drag.
  nlohmann::json drag(const std::string& id, const nlohmann::json& body);
  nlohmann::json stop(const std::string& id);
  /// Makes the result of the last run the anchor of the next one.
  nlohmann::json commit(const std::string& id);
  /// Discards the result of the last run.
  nlohmann::json reset(const std::string& id);
  void remove(const std::string& id);
  nlohmann::json export_run(const std::string& id) const;

  /// Blocks until the log of `id` holds more than `cursor` events, the
  /// deadline passes, or the session is removed. Returns the new events.
  std::vector<SessionEvent> wait_events(const std::string& id, std::size_t cursor,
                                        std::chrono::steady_clock::time_point deadline) const;
  /// Blocks until the session is no longer running (or the deadline passes).
  SessionStatus wait_idle(const std::string& id, std::chrono::steady_clock::time_point deadline) const;

  void shutdown();

 private:
  struct Record;
  std::shared_ptr<Record> find(const std::string& id) const;

  std::shared_ptr<const Generator> generator_;
  EngineConfig defaults_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Record>> sessions_;
  std::uint64_t next_id_ = 1;
};

struct HttpReply {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// Routes one HTTP request (everything except the WebSocket upgrade).
HttpReply route_request(SessionManager& sessions, const std::string& method, const std::string& target,
                        const std::string& body);

struct ServiceOptions {
  std::string host = "127.0.0.1";
  unsigned short port = 8080;  // 0 picks a free port
  std::chrono::milliseconds frame_interval{100};
};

/// HTTP + WebSocket front end for a SessionManager.
class Server {
 public:
  Server(std::shared_ptr<SessionManager> sessions, ServiceOptions options = {});
  ~Server();

  /// Binds and starts accepting; returns the bound port.
  unsigned short start();
  void stop();
  /// Blocks until stop() is called from another thread.
  void wait();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pointdrag
