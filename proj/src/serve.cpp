#include "cofair/serve.hpp"

#include <charconv>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "cofair/error.hpp"
#include "cofair/log.hpp"
#include "cofair/verify.hpp"

namespace cofair {

using nlohmann::json;

namespace {

HttpResponse error_response(int status, const std::string& message) {
  return {status, json{{"error", message}}.dump()};
}

json sig10(double v) { return round_sig10(v); }

json sig10(const std::vector<double>& values) {
  json out = json::array();
  for (double v : values) out.push_back(round_sig10(v));
  return out;
}

// Strict positive integer parse; false on junk.
bool parse_count(const std::string& text, std::size_t& out) {
  if (text.empty()) return false;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

ServeState::ServeState(Checkpoint checkpoint, InteractionDataset dataset, SensitiveAttributes attributes,
                       std::string checkpoint_hash, const ServeOptions& options)
    : checkpoint_(std::move(checkpoint)),
      dataset_(std::move(dataset)),
      attributes_(std::move(attributes)),
      hash_(std::move(checkpoint_hash)),
      options_(options) {
  report_ = evaluate(checkpoint_.model, dataset_, attributes_, options_.k, options_.split);
  dense_users_.resize(dataset_.user_count);
  for (Index u = 0; u < dense_users_.size(); ++u) dense_users_[u] = u;
  trajectories_ = trajectory_eval(checkpoint_.model, attributes_, dense_users_);
}

HttpResponse ServeState::levels() const {
  return {200, json{{"T", checkpoint_.model.levels()},
                    {"lambdas", sig10(checkpoint_.schedule.lambdas)},
                    {"checkpoint_hash", hash_}}
                   .dump()};
}

const Index* ServeState::find_user(const QueryParams& query, HttpResponse& error) const {
  auto it = query.find("user");
  if (it == query.end() || it->second.empty()) {
    error = error_response(400, "missing query parameter 'user'");
    return nullptr;
  }
  const auto dense = dataset_.user_ids.find(it->second);
  if (!dense) {
    error = error_response(404, "unknown user '" + it->second + "'");
    return nullptr;
  }
  return &dense_users_[*dense];
}

HttpResponse ServeState::recommend(const QueryParams& query) const {
  HttpResponse error;
  const Index* user = find_user(query, error);
  if (!user) return error;
  std::size_t t = 0, k = 10;
  auto ti = query.find("t");
  if (ti == query.end() || !parse_count(ti->second, t) || t < 1 || t > checkpoint_.model.levels()) {
    return error_response(400, "t must be an integer in [1, " + std::to_string(checkpoint_.model.levels()) + "]");
  }
  if (auto ki = query.find("k"); ki != query.end()) {
    if (!parse_count(ki->second, k) || k < 1) return error_response(400, "k must be a positive integer");
  }
  const Index users[] = {*user};
  const Tensor2 scores = score_matrix(checkpoint_.model, users, t);
  const auto top = topk_from_scores(scores.row(0), k, exclusion_mask(dataset_, *user, Split::test));
  json items = json::array();
  for (std::size_t r = 0; r < top.items.size(); ++r) {
    items.push_back({{"item", dataset_.item_ids.raw(top.items[r])}, {"score", sig10(top.scores[r])}});
  }
  return {200, json{{"user", dataset_.user_ids.raw(*user)}, {"t", t}, {"items", std::move(items)}}.dump()};
}

HttpResponse ServeState::metrics(const QueryParams& query) const {
  if (auto ki = query.find("k"); ki != query.end()) {
    std::size_t k = 0;
    if (!parse_count(ki->second, k) || k != options_.k) {
      return error_response(400, "metrics are precomputed for k=" + std::to_string(options_.k) + " only");
    }
  }
  json levels = json::array();
  for (const auto& m : report_.levels) {
    levels.push_back({{"t", m.level},
                      {"recall", sig10(m.recall)},
                      {"ndcg", sig10(m.ndcg)},
                      {"dp", sig10(m.dp)},
                      {"eopp", sig10(m.eopp)}});
  }
  return {200, levels.dump()};
}

HttpResponse ServeState::trajectory(const QueryParams& query) const {
  HttpResponse error;
  const Index* user = find_user(query, error);
  if (!user) return error;
  const auto row = trajectories_.losses.row(*user);
  const std::vector<double> values(row.begin(), row.end());
  return {200, json{{"user", dataset_.user_ids.raw(*user)},
                    {"fair_loss", sig10(values)},
                    {"monotone", row_monotone(row, options_.tau)}}
                   .dump()};
}

struct Server::Impl {
  const ServeState& state;
  ServeOptions options;
  httplib::Server http;
  std::thread worker;
  int port = 0;
};

namespace {

QueryParams params_of(const httplib::Request& req) {
  QueryParams out;
  for (const auto& [key, value] : req.params) out.emplace(key, value);
  return out;
}

}  // namespace

Server::Server(const ServeState& state, ServeOptions options) : impl_(new Impl{state, std::move(options), {}, {}, 0}) {
  auto& http = impl_->http;
  const bool cors = impl_->options.cors;
  auto reply = [](httplib::Response& res, const HttpResponse& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  const ServeState* s = &state;
  http.Get("/api/levels", [=](const httplib::Request&, httplib::Response& res) { reply(res, s->levels()); });
  http.Get("/api/recommend",
           [=](const httplib::Request& req, httplib::Response& res) { reply(res, s->recommend(params_of(req))); });
  http.Get("/api/metrics",
           [=](const httplib::Request& req, httplib::Response& res) { reply(res, s->metrics(params_of(req))); });
  http.Get("/api/trajectory",
           [=](const httplib::Request& req, httplib::Response& res) { reply(res, s->trajectory(params_of(req))); });
  if (cors) {
    http.set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_header("Access-Control-Allow-Methods", "GET, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
    });
    http.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  }
  if (!impl_->options.static_dir.empty()) {
    if (!http.set_mount_point("/", impl_->options.static_dir)) {
      throw ConfigError("static directory " + impl_->options.static_dir + " does not exist");
    }
  }
}

Server::~Server() { stop(); }

int Server::start() {
  auto& im = *impl_;
  if (im.options.port == 0) {
    im.port = im.http.bind_to_any_port(im.options.host);
  } else {
    im.port = im.http.bind_to_port(im.options.host, im.options.port) ? im.options.port : -1;
  }
  if (im.port < 0) throw Error("serve", "cannot bind " + im.options.host + ":" + std::to_string(im.options.port));
  im.worker = std::thread([&im] { im.http.listen_after_bind(); });
  im.http.wait_until_ready();
  log::info("serving on http://" + im.options.host + ":" + std::to_string(im.port));
  return im.port;
}

void Server::stop() {
  if (!impl_) return;
  impl_->http.stop();
  if (impl_->worker.joinable()) impl_->worker.join();
}

void Server::wait() {
  if (impl_->worker.joinable()) impl_->worker.join();
}

}  // namespace cofair
