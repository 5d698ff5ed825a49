#include "pointdrag/service.hpp"

#include <poll.h>
#include <sys/socket.h>

#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <ctime>
#include <list>
#include <sstream>

#include "pointdrag/io.hpp"

namespace pointdrag {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;
using nlohmann::json;

std::string to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::idle: return "idle";
    case SessionStatus::running: return "running";
    case SessionStatus::converged: return "converged";
    case SessionStatus::max_steps: return "max_steps";
    case SessionStatus::aborted: return "aborted";
    case SessionStatus::stopped: return "stopped";
  }
  return "unknown";
}

namespace {

SessionStatus from_termination(Termination t) {
  switch (t) {
    case Termination::converged: return SessionStatus::converged;
    case Termination::max_steps: return SessionStatus::max_steps;
    case Termination::stopped: return SessionStatus::stopped;
    case Termination::aborted: return SessionStatus::aborted;
  }
  return SessionStatus::aborted;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json points_json(const std::vector<Point2>& points) {
  json out = json::array();
  for (const auto& p : points) out.push_back(point_to_json(p));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// SessionManager
// ---------------------------------------------------------------------------

struct SessionManager::Record {
  std::string id;
  std::string created_at;
  mutable std::mutex mu;
  mutable std::condition_variable cv;
  SessionStatus status = SessionStatus::idle;
  LatentStack anchor;   // start of the next run
  LatentStack current;  // latest latent
  std::shared_ptr<DragSession> last_run;
  std::thread worker;
  std::atomic<bool> stop{false};
  int run = 0;
  std::size_t run_start = 0;  // index of the first event of the latest run
  std::vector<SessionEvent> events;
  bool removed = false;

  json describe() const {
    json d{{"session_id", id}, {"status", to_string(status)}, {"run", run}, {"created_at", created_at}};
    if (last_run) {
      d["steps"] = last_run->step_log().size();
    }
    return d;
  }
};

SessionManager::SessionManager(std::shared_ptr<const Generator> generator, EngineConfig defaults)
    : generator_(std::move(generator)), defaults_(std::move(defaults)) {}

SessionManager::~SessionManager() { shutdown(); }

void SessionManager::shutdown() {
  std::map<std::string, std::shared_ptr<Record>> all;
  {
    std::lock_guard lock(mu_);
    all.swap(sessions_);
  }
  for (auto& [id, rec] : all) {
    rec->stop = true;
    if (rec->worker.joinable()) rec->worker.join();
    std::lock_guard lock(rec->mu);
    rec->removed = true;
    rec->cv.notify_all();
  }
}

std::shared_ptr<SessionManager::Record> SessionManager::find(const std::string& id) const {
  std::lock_guard lock(mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw not_found_error("unknown session '" + id + "'");
  return it->second;
}

json SessionManager::create(const json& body) {
  if (!body.is_object()) throw validation_error("body", "expected a JSON object");
  const auto& gs = generator_->spec();
  auto rec = std::make_shared<Record>();
  rec->created_at = utc_now();
  if (body.contains("session")) {
    auto session = std::shared_ptr<DragSession>(import_session(body["session"], generator_));
    rec->anchor = session->initial_latent();
    rec->current = session->latent();
    rec->run = 1;
    for (const auto& s : session->step_log()) {
      json ev = step_to_json(s);
      ev["type"] = "step";
      ev["run"] = 1;
      rec->events.push_back({ev, session->snapshot(s.latent_snapshot_id), false});
    }
    if (session->satisfied()) rec->status = SessionStatus::converged;
    else if (static_cast<int>(session->step_log().size()) >= session->config().max_steps) rec->status = SessionStatus::max_steps;
    else rec->status = SessionStatus::stopped;
    json term{{"type", "terminal"}, {"run", 1}, {"status", to_string(rec->status)},
              {"step_index", session->step_log().size()}, {"handles", points_json(session->handles())},
              {"max_distance", session->max_distance()}};
    rec->events.push_back({term, session->latent(), true});
    rec->last_run = std::move(session);
  } else if (body.contains("latent")) {
    rec->anchor = latent_from_json(body["latent"], gs);
    rec->current = rec->anchor;
  } else {
    std::uint64_t seed = 0;
    if (body.contains("seed")) {
      if (!body["seed"].is_number_unsigned() && !body["seed"].is_number_integer()) {
        throw validation_error("seed", "expected a non-negative integer");
      }
      if (body["seed"].is_number_integer() && body["seed"].get<std::int64_t>() < 0) {
        throw validation_error("seed", "expected a non-negative integer");
      }
      seed = body["seed"].get<std::uint64_t>();
    }
    LatentMode mode = LatentMode::per_layer;
    if (body.contains("latent_mode")) {
      try {
        mode = latent_mode_from_string(body["latent_mode"].get<std::string>());
      } catch (const std::exception& e) {
        throw validation_error("latent_mode", e.what());
      }
    }
    rec->anchor = generator_->latent_from_seed(seed, mode);
    rec->current = rec->anchor;
  }

  std::lock_guard lock(mu_);
  std::ostringstream id;
  id << "s" << std::hex << next_id_++;
  rec->id = id.str();
  sessions_[rec->id] = rec;
  json out = rec->describe();
  out["generator_seed"] = gs.seed;
  out["image_size"] = gs.image_size;
  return out;
}

json SessionManager::describe(const std::string& id) const {
  auto rec = find(id);
  std::lock_guard lock(rec->mu);
  return rec->describe();
}

std::vector<std::uint8_t> SessionManager::image_png(const std::string& id) const {
  auto rec = find(id);
  LatentStack w;
  {
    std::lock_guard lock(rec->mu);
    w = rec->current;
  }
  return encode_png(generator_->render_image(generator_->scene(w)));
}

json SessionManager::drag(const std::string& id, const json& body) {
  auto rec = find(id);
  if (!body.is_object()) throw validation_error("body", "expected a JSON object");
  if (body.contains("mask") && !body["mask"].is_null()) {
    throw validation_error("mask", "upload the mask inline as base64 PNG in \"mask_png\"");
  }
  DragSpec spec = drag_spec_from_json(body);
  EngineConfig config = defaults_;
  if (body.contains("config") && !body["config"].is_null()) {
    try {
      config = config_from_json(body["config"], defaults_);
      config.validate(generator_->spec());
    } catch (const validation_error& e) {
      throw validation_error("config." + e.field(), e.what());
    }
  }

  std::unique_lock lock(rec->mu);
  if (rec->status != SessionStatus::idle) {
    throw conflict_error("session is " + to_string(rec->status) + "; drag requires an idle session (commit or reset first)");
  }
  // Validates everything before any state changes.
  auto session = std::make_shared<DragSession>(generator_, rec->anchor, std::move(spec), std::move(config));

  if (rec->worker.joinable()) {
    lock.unlock();
    rec->worker.join();
    lock.lock();
  }
  rec->run += 1;
  rec->run_start = rec->events.size();
  rec->status = SessionStatus::running;
  rec->stop = false;
  rec->last_run = session;
  const int run = rec->run;
  rec->worker = std::thread([rec, session, run] {
    auto on_step = [&](const StepReport& s) {
      json ev = step_to_json(s);
      ev["type"] = "step";
      ev["run"] = run;
      std::lock_guard g(rec->mu);
      rec->current = session->latent();
      rec->events.push_back({std::move(ev), session->latent(), false});
      rec->cv.notify_all();
    };
    SessionStatus status;
    std::string message;
    try {
      const auto result = session->run(&rec->stop, on_step);
      status = from_termination(result.reason);
    } catch (const std::exception& e) {
      status = SessionStatus::aborted;
      message = e.what();
    }
    std::lock_guard g(rec->mu);
    rec->status = status;
    rec->current = session->latent();
    json term{{"type", "terminal"},
              {"run", run},
              {"status", to_string(status)},
              {"step_index", session->step_log().size()},
              {"handles", points_json(session->handles())},
              {"max_distance", session->max_distance()}};
    if (!message.empty()) term["message"] = message;
    rec->events.push_back({std::move(term), session->latent(), true});
    rec->cv.notify_all();
  });
  return {{"session_id", rec->id}, {"run", run}, {"status", "running"}};
}

json SessionManager::stop(const std::string& id) {
  auto rec = find(id);
  std::lock_guard lock(rec->mu);
  if (rec->status != SessionStatus::running) throw conflict_error("session is not running");
  rec->stop = true;
  return rec->describe();
}

json SessionManager::commit(const std::string& id) {
  auto rec = find(id);
  std::lock_guard lock(rec->mu);
  if (rec->status == SessionStatus::running) throw conflict_error("session is running");
  rec->anchor = rec->current;
  rec->status = SessionStatus::idle;
  return rec->describe();
}

json SessionManager::reset(const std::string& id) {
  auto rec = find(id);
  std::lock_guard lock(rec->mu);
  if (rec->status == SessionStatus::running) throw conflict_error("session is running");
  rec->current = rec->anchor;
  rec->status = SessionStatus::idle;
  return rec->describe();
}

void SessionManager::remove(const std::string& id) {
  std::shared_ptr<Record> rec;
  {
    std::lock_guard lock(mu_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw not_found_error("unknown session '" + id + "'");
    rec = it->second;
    sessions_.erase(it);
  }
  rec->stop = true;
  if (rec->worker.joinable()) rec->worker.join();
  std::lock_guard lock(rec->mu);
  rec->removed = true;
  rec->cv.notify_all();
}

json SessionManager::export_run(const std::string& id) const {
  auto rec = find(id);
  std::lock_guard lock(rec->mu);
  if (!rec->last_run) throw conflict_error("session has no run to export");
  if (rec->status == SessionStatus::running) throw conflict_error("session is running");
  return export_session(*rec->last_run, generator_->spec().seed);
}

std::vector<SessionEvent> SessionManager::wait_events(const std::string& id, std::size_t cursor,
                                                      std::chrono::steady_clock::time_point deadline) const {
  std::shared_ptr<Record> rec;
  try {
    rec = find(id);
  } catch (const not_found_error&) {
    return {};
  }
  std::unique_lock lock(rec->mu);
  rec->cv.wait_until(lock, deadline, [&] { return rec->removed || rec->events.size() > cursor; });
  if (rec->events.size() <= cursor) return {};
  return {rec->events.begin() + static_cast<std::ptrdiff_t>(cursor), rec->events.end()};
}

SessionStatus SessionManager::wait_idle(const std::string& id, std::chrono::steady_clock::time_point deadline) const {
  auto rec = find(id);
  std::unique_lock lock(rec->mu);
  rec->cv.wait_until(lock, deadline, [&] { return rec->removed || rec->status != SessionStatus::running; });
  return rec->status;
}

// ---------------------------------------------------------------------------
// Routing
// ---------------------------------------------------------------------------

namespace {

HttpReply json_reply(int status, const json& body) { return {status, "application/json", body.dump()}; }

HttpReply error_reply(int status, const std::string& kind, const std::string& message,
                      const std::string& field = {}) {
  json body{{"error", kind}, {"message", message}};
  if (!field.empty()) body["field"] = field;
  return json_reply(status, body);
}

std::vector<std::string> split_path(const std::string& target) {
  std::string path = target.substr(0, target.find('?'));
  std::vector<std::string> parts;
  std::size_t i = 0;
  while (i < path.size()) {
    while (i < path.size() && path[i] == '/') ++i;
    const std::size_t j = path.find('/', i);
    const std::string part = path.substr(i, j == std::string::npos ? std::string::npos : j - i);
    if (!part.empty()) parts.push_back(part);
    if (j == std::string::npos) break;
    i = j;
  }
  return parts;
}

json parse_body(const std::string& body) {
  if (body.empty()) return json::object();
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    throw validation_error("body", std::string("malformed JSON: ") + e.what());
  }
}

}  // namespace

HttpReply route_request(SessionManager& sessions, const std::string& method, const std::string& target,
                        const std::string& body) {
  try {
    if (method == "OPTIONS") return {204, "text/plain", ""};
    const auto parts = split_path(target);
    if (parts.size() == 1 && parts[0] == "health") {
      if (method != "GET") return error_reply(405, "method_not_allowed", method + " " + target);
      return json_reply(200, {{"status", "ok"}});
    }
    if (parts.empty() || parts[0] != "sessions") return error_reply(404, "not_found", "no route for " + target);
    if (parts.size() == 1) {
      if (method != "POST") return error_reply(405, "method_not_allowed", method + " " + target);
      return json_reply(201, sessions.create(parse_body(body)));
    }
    const std::string& id = parts[1];
    if (parts.size() == 2) {
      if (method == "GET") return json_reply(200, sessions.describe(id));
      if (method == "DELETE") {
        sessions.remove(id);
        return json_reply(200, {{"session_id", id}, {"deleted", true}});
      }
      return error_reply(405, "method_not_allowed", method + " " + target);
    }
    if (parts.size() == 3) {
      const std::string& action = parts[2];
      if (action == "image" && method == "GET") {
        const auto png = sessions.image_png(id);
        return {200, "image/png", std::string(png.begin(), png.end())};
      }
      if (action == "export" && method == "GET") return json_reply(200, sessions.export_run(id));
      if (method == "POST") {
        if (action == "drag") return json_reply(202, sessions.drag(id, parse_body(body)));
        if (action == "stop") return json_reply(200, sessions.stop(id));
        if (action == "commit") return json_reply(200, sessions.commit(id));
        if (action == "reset") return json_reply(200, sessions.reset(id));
      }
      if (action == "image" || action == "export" || action == "drag" || action == "stop" || action == "commit" ||
          action == "reset" || action == "events") {
        sessions.describe(id);  // unknown session wins over a wrong method
        return error_reply(405, "method_not_allowed", method + " " + target);
      }
    }
    return error_reply(404, "not_found", "no route for " + target);
  } catch (const validation_error& e) {
    return error_reply(400, "validation", e.what(), e.field());
  } catch (const not_found_error& e) {
    return error_reply(404, "not_found", e.what());
  } catch (const conflict_error& e) {
    return error_reply(409, "conflict", e.what());
  } catch (const io_error& e) {
    return error_reply(400, "invalid_document", e.what());
  } catch (const std::invalid_argument& e) {
    return error_reply(400, "validation", e.what());
  } catch (const std::exception& e) {
    return error_reply(500, "internal", e.what());
  }
}

// ---------------------------------------------------------------------------
// Server
// ---------------------------------------------------------------------------

struct Server::Impl {
  std::shared_ptr<SessionManager> sessions;
  ServiceOptions options;
  net::io_context ioc;
  std::unique_ptr<tcp::acceptor> acceptor;
  unsigned short port = 0;
  std::thread accept_thread;
  std::atomic<bool> stopping{false};

  std::mutex mu;
  std::condition_variable stopped_cv;
  bool stopped = false;
  struct Connection {
    int fd = -1;
    std::thread thread;
    std::atomic<bool> done{false};
  };
  std::list<std::shared_ptr<Connection>> connections;

  void accept_loop();
  void serve(std::shared_ptr<Connection> conn, tcp::socket socket);
  void stream_events(websocket::stream<tcp::socket>& ws, const std::string& id);
  void reap();
};

namespace {

template <class Body>
void add_cors(http::response<Body>& res) {
  res.set(http::field::access_control_allow_origin, "*");
  res.set(http::field::access_control_allow_methods, "GET, POST, DELETE, OPTIONS");
  res.set(http::field::access_control_allow_headers, "Content-Type");
}

}  // namespace

void Server::Impl::reap() {
  std::lock_guard lock(mu);
  for (auto it = connections.begin(); it != connections.end();) {
    if ((*it)->done) {
      if ((*it)->thread.joinable()) (*it)->thread.join();
      it = connections.erase(it);
    } else {
      ++it;
    }
  }
}

void Server::Impl::accept_loop() {
  while (!stopping) {
    tcp::socket socket(ioc);
    beast::error_code ec;
    acceptor->accept(socket, ec);
    if (stopping) break;
    if (ec) continue;
    reap();
    auto conn = std::make_shared<Connection>();
    conn->fd = socket.native_handle();
    std::lock_guard lock(mu);
    connections.push_back(conn);
    conn->thread = std::thread([this, conn, s = std::move(socket)]() mutable { serve(conn, std::move(s)); });
  }
}

void Server::Impl::serve(std::shared_ptr<Connection> conn, tcp::socket socket) {
  beast::flat_buffer buffer;
  beast::error_code ec;
  while (!stopping) {
    http::request<http::string_body> req;
    http::read(socket, buffer, req, ec);
    if (ec) break;

    if (websocket::is_upgrade(req)) {
      const auto parts = split_path(std::string(req.target()));
      bool known = parts.size() == 3 && parts[0] == "sessions" && parts[2] == "events";
      if (known) {
        try {
          sessions->describe(parts[1]);
        } catch (const not_found_error&) {
          known = false;
        }
      }
      if (!known) {
        http::response<http::string_body> res{http::status::not_found, req.version()};
        res.set(http::field::content_type, "application/json");
        res.body() = json{{"error", "not_found"}, {"message", "unknown session or event stream"}}.dump();
        res.prepare_payload();
        http::write(socket, res, ec);
        break;
      }
      websocket::stream<tcp::socket> ws(std::move(socket));
      ws.accept(req, ec);
      if (!ec) stream_events(ws, parts[1]);
      ws.next_layer().shutdown(tcp::socket::shutdown_both, ec);
      conn->done = true;
      return;
    }

    const std::string method(req.method_string());
    const auto reply = route_request(*sessions, method, std::string(req.target()), req.body());
    http::response<http::string_body> res{static_cast<http::status>(reply.status), req.version()};
    res.set(http::field::server, "pointdrag");
    res.set(http::field::content_type, reply.content_type);
    add_cors(res);
    res.keep_alive(req.keep_alive());
    res.body() = reply.body;
    res.prepare_payload();
    http::write(socket, res, ec);
    if (ec || !res.keep_alive()) break;
  }
  socket.shutdown(tcp::socket::shutdown_both, ec);
  conn->done = true;
}

void Server::Impl::stream_events(websocket::stream<tcp::socket>& ws, const std::string& id) {
  ws.text(true);
  std::size_t cursor = 0;
  {
    // Start at the latest run so a late subscriber still sees it from its first step.
    const auto all = sessions->wait_events(id, 0, std::chrono::steady_clock::now());
    for (std::size_t i = all.size(); i > 0; --i) {
      if (all[i - 1].payload.value("type", "") == "step" && all[i - 1].payload.value("step_index", 0) == 1) {
        cursor = i - 1;
        break;
      }
    }
    if (!all.empty() && cursor == 0) {
      // A run without steps (already satisfied) is a lone terminal event.
      const int last_run = all.back().payload.value("run", 0);
      std::size_t i = all.size();
      while (i > 0 && all[i - 1].payload.value("run", 0) == last_run) --i;
      cursor = i;
    }
  }
  auto last_frame = std::chrono::steady_clock::time_point{};
  beast::error_code ec;
  while (!stopping) {
    const auto batch = sessions->wait_events(id, cursor, std::chrono::steady_clock::now() + std::chrono::milliseconds(100));
    if (batch.empty()) {
      // Answer a close frame or notice a dropped peer while idle.
      pollfd pfd{ws.next_layer().native_handle(), POLLIN, 0};
      if (::poll(&pfd, 1, 0) > 0) {
        beast::flat_buffer incoming;
        ws.read(incoming, ec);
        if (ec) return;
      }
      try {
        sessions->describe(id);
      } catch (const not_found_error&) {
        break;
      }
      continue;
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      json payload = batch[i].payload;
      payload["session_id"] = id;
      const auto now = std::chrono::steady_clock::now();
      const bool latest = i + 1 == batch.size();
      if (batch[i].terminal || (latest && now - last_frame >= options.frame_interval)) {
        const auto& g = sessions->generator();
        payload["frame"] = base64_encode(encode_png(g.render_image(g.scene(batch[i].latent))));
        last_frame = now;
      }
      ws.write(net::buffer(payload.dump()), ec);
      if (ec) return;
    }
    cursor += batch.size();
  }
  ws.close(websocket::close_code::normal, ec);
}

Server::Server(std::shared_ptr<SessionManager> sessions, ServiceOptions options) : impl_(std::make_unique<Impl>()) {
  impl_->sessions = std::move(sessions);
  impl_->options = std::move(options);
}

Server::~Server() { stop(); }

unsigned short Server::start() {
  auto& im = *impl_;
  const auto address = net::ip::make_address(im.options.host);
  im.acceptor = std::make_unique<tcp::acceptor>(im.ioc);
  tcp::endpoint endpoint{address, im.options.port};
  im.acceptor->open(endpoint.protocol());
  im.acceptor->set_option(net::socket_base::reuse_address(true));
  im.acceptor->bind(endpoint);
  im.acceptor->listen(net::socket_base::max_listen_connections);
  im.port = im.acceptor->local_endpoint().port();
  im.accept_thread = std::thread([&im] { im.accept_loop(); });
  return im.port;
}

void Server::stop() {
  auto& im = *impl_;
  if (im.stopping.exchange(true)) return;
  if (im.acceptor) {
    ::shutdown(im.acceptor->native_handle(), SHUT_RDWR);
    beast::error_code ec;
    // Wake a blocking accept.
    tcp::socket poke(im.ioc);
    poke.connect({net::ip::make_address(im.options.host), im.port}, ec);
    poke.close(ec);
  }
  if (im.accept_thread.joinable()) im.accept_thread.join();
  {
    std::lock_guard lock(im.mu);
    for (auto& c : im.connections) {
      if (!c->done) ::shutdown(c->fd, SHUT_RDWR);
    }
  }
  for (;;) {
    std::shared_ptr<Impl::Connection> c;
    {
      std::lock_guard lock(im.mu);
      if (im.connections.empty()) break;
      c = im.connections.front();
      im.connections.pop_front();
    }
    if (c->thread.joinable()) c->thread.join();
  }
  if (im.acceptor) {
    beast::error_code ec;
    im.acceptor->close(ec);
  }
  std::lock_guard lock(im.mu);
  im.stopped = true;
  im.stopped_cv.notify_all();
}

void Server::wait() {
  std::unique_lock lock(impl_->mu);
  impl_->stopped_cv.wait(lock, [&] { return impl_->stopped; });
}

}  // namespace pointdrag
