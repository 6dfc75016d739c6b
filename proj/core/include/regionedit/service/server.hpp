#pragma once

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "regionedit/error.hpp"
#include "regionedit/models.hpp"
#include "regionedit/service/job_store.hpp"

namespace regionedit::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path data_dir = "region-edit-data";
  int workers = 1;  // 0: jobs only run through JobService::run_next()
  std::size_t queue_capacity = 64;
  std::size_t max_image_bytes = 4u << 20;
  int max_steps = 1000;
  std::string cors_origin = "*";
  std::filesystem::path studio_dir;  // served under /studio when set
  EditParams defaults{};

  // REGION_EDIT_PORT and REGION_EDIT_DATA_DIR override the given values.
  static ServiceConfig with_environment(ServiceConfig base);
};

class QueueFull : public Error {
 public:
  using Error::Error;
};

class PayloadTooLarge : public Error {
 public:
  using Error::Error;
};

struct SubmitResult {
  std::string id;
  bool created = false;  // false when an idempotency key matched
};

struct ServiceStats {
  int workers = 0;
  std::size_t queue_capacity = 0;
  std::size_t queued = 0;
  std::size_t running = 0;
  std::size_t done = 0;
  std::size_t failed = 0;
  std::size_t no_op_mask = 0;
  std::size_t peak_running = 0;  // highest concurrent running count observed
};

struct MaskPreview {
  std::string soft_mask_png;
  std::string binary_mask_png;
  double area_fraction = 0;
  int threshold = 0;
};

// Job queue, worker pool and persistence, independent of HTTP.
// Construction reloads the store: queued jobs are requeued in submission
// order and jobs left running by a previous process are marked failed.
class JobService {
 public:
  JobService(ModelBundle models, ServiceConfig config);
  ~JobService();

  JobService(const JobService&) = delete;
  JobService& operator=(const JobService&) = delete;

  // Validates prompts, parameters and the image, persists the job and
  // queues it. Throws InvalidArgument, PayloadTooLarge or QueueFull.
  SubmitResult submit(std::string_view input_png, JobRequest request);

  std::optional<JobRecord> get(const std::string& id) const;
  std::vector<JobRecord> list() const;
  // Raw artifact bytes from the job directory.
  std::optional<std::string> artifact(const std::string& id, std::string_view file) const;

  // Runs the oldest queued job on the calling thread; false if none.
  bool run_next();

  // Stops workers. A job interrupted mid-run is recorded as failed.
  void stop();

  MaskPreview preview(std::string_view input_png, std::string_view positioning_text,
                      int threshold, ResizePolicy resize) const;

  ServiceStats stats() const;
  const ServiceConfig& config() const noexcept { return config_; }
  const ModelBundle& models() const noexcept { return models_; }

 private:
  struct Interrupted {};

  // Pops the next queued id and marks it running; mutex_ must be held.
  std::string claim_locked();
  void worker_loop();
  void execute(const std::string& id);
  Image load_input(std::string_view png, ResizePolicy resize) const;

  ModelBundle models_;
  ServiceConfig config_;
  JobStore store_;

  mutable std::mutex mutex_;
  std::condition_variable wake_;
  std::map<std::string, JobRecord> jobs_;
  std::map<std::string, std::string> idempotency_;
  std::deque<std::string> queue_;
  std::uint64_t next_sequence_ = 1;
  std::size_t running_ = 0;
  std::size_t peak_running_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
};

// JSON body served for GET /v1/jobs/{id}.
std::string job_to_json(const JobRecord& record);
// JSON schemas served under /v1/schema.
std::string schema_json();

// HTTP front end for a JobService. Endpoints live under /v1.
class HttpServer {
 public:
  HttpServer(std::shared_ptr<JobService> service);
  ~HttpServer();

  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds the configured host/port and returns the bound port.
  int bind();
  // Blocks until stop().
  void listen();
  // bind() + listen() on a background thread; returns the port once ready.
  int start();
  void stop();
  int port() const noexcept { return port_; }

 private:
  struct Impl;
  std::shared_ptr<JobService> service_;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace regionedit::service
