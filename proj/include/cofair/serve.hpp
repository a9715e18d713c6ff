#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>

#include "cofair/metrics.hpp"
#include "cofair/training.hpp"

namespace cofair {

struct ServeOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::string static_dir;
  std::size_t k = 10;
  Split split = Split::test;
  double tau = 1e-3;
  bool cors = true;
};

struct HttpResponse {
  int status = 200;
  std::string body;  // JSON
};

using QueryParams = std::map<std::string, std::string>;

// Immutable state behind the HTTP API. Metrics and trajectories are computed
// once here; handlers only read.
class ServeState {
 public:
  ServeState(Checkpoint checkpoint, InteractionDataset dataset, SensitiveAttributes attributes,
             std::string checkpoint_hash, const ServeOptions& options);

  HttpResponse levels() const;
  HttpResponse recommend(const QueryParams& query) const;
  HttpResponse metrics(const QueryParams& query) const;
  HttpResponse trajectory(const QueryParams& query) const;

  const std::string& checkpoint_hash() const { return hash_; }
  const MetricsReport& metrics_report() const { return report_; }

 private:
  const Index* find_user(const QueryParams& query, HttpResponse& error) const;

  Checkpoint checkpoint_;
  InteractionDataset dataset_;
  SensitiveAttributes attributes_;
  std::string hash_;
  ServeOptions options_;
  MetricsReport report_;
  FairnessTrajectory trajectories_;
  std::vector<Index> dense_users_;
};

// HTTP front end. start() binds and serves on a background thread.
class Server {
 public:
  Server(const ServeState& state, ServeOptions options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Returns the bound port; throws Error when binding fails.
  int start();
  void stop();
  // Blocks until stop() is called from another thread or a signal handler.
  void wait();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cofair
