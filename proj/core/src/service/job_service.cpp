#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <json.hpp>

#include "regionedit/calibration.hpp"
#include "regionedit/image_io.hpp"
#include "regionedit/nn/serialize.hpp"
#include "regionedit/params_json.hpp"
#include "regionedit/sampler.hpp"
#include "regionedit/service/server.hpp"

namespace regionedit::service {

namespace {

std::string now_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t secs = std::chrono::system_clock::to_time_t(now);
  const auto millis =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                static_cast<int>(millis));
  return buf;
}

// Re-raises prompt errors under the request field they came from.
void check_prompt(const TextEncoder& encoder, const std::string& text, const char* field) {
  if (text.empty()) throw InvalidArgument(field, "must not be empty");
  try {
    encoder.encode(text);
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(field, e.what());
  }
}

void fail(JobRecord& record, std::string kind, std::string message,
          std::optional<int> step = std::nullopt) {
  record.status = JobStatus::kFailed;
  record.error_kind = std::move(kind);
  record.error = std::move(message);
  record.error_step = step;
  record.finished_at = now_utc();
}

}  // namespace

ServiceConfig ServiceConfig::with_environment(ServiceConfig base) {
  if (const char* port = std::getenv("REGION_EDIT_PORT"); port != nullptr && *port != '\0') {
    char* end = nullptr;
    const long value = std::strtol(port, &end, 10);
    if (*end != '\0' || value < 0 || value > 65535) {
      throw InvalidArgument("REGION_EDIT_PORT", "expected a port number");
    }
    base.port = static_cast<int>(value);
  }
  if (const char* dir = std::getenv("REGION_EDIT_DATA_DIR"); dir != nullptr && *dir != '\0') {
    base.data_dir = dir;
  }
  return base;
}

JobService::JobService(ModelBundle models, ServiceConfig config)
    : models_(std::move(models)), config_(std::move(config)), store_(config_.data_dir) {
  models_.validate();
  if (config_.workers < 0) throw InvalidArgument("workers", "must be non-negative");
  for (JobRecord& record : store_.load_all()) {
    if (record.status == JobStatus::kRunning) {
      fail(record, "interrupted", "the service stopped while the job was running");
      store_.save_status(record);
    }
    if (record.status == JobStatus::kQueued) queue_.push_back(record.id);
    if (!record.request.idempotency_key.empty()) {
      idempotency_[record.request.idempotency_key] = record.id;
    }
    next_sequence_ = std::max(next_sequence_, record.sequence + 1);
    jobs_[record.id] = std::move(record);
  }
  for (int i = 0; i < config_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
}

JobService::~JobService() { stop(); }

void JobService::stop() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  wake_.notify_all();
  for (std::thread& t : workers_) {
    if (t.joinable()) t.join();
  }
  workers_.clear();
}

Image JobService::load_input(std::string_view png, ResizePolicy resize) const {
  if (png.size() > config_.max_image_bytes) {
    throw PayloadTooLarge("image exceeds " + std::to_string(config_.max_image_bytes) + " bytes");
  }
  Image image = decode_png(png);
  const Shape3 want = models_.image_shape;
  if (image.height() != want.height || image.width() != want.width) {
    if (resize == ResizePolicy::kReject) {
      throw InvalidArgument("image", "size " + std::to_string(image.height()) + "x" +
                                         std::to_string(image.width()) + " does not match " +
                                         std::to_string(want.height) + "x" +
                                         std::to_string(want.width) +
                                         " (set resize to \"resize\" to rescale)");
    }
    image = resize_bilinear(image, want.height, want.width);
  }
  return image;
}

SubmitResult JobService::submit(std::string_view input_png, JobRequest request) {
  check_prompt(*models_.text_encoder, request.positioning_text, "positioning_text");
  check_prompt(*models_.text_encoder, request.target_text, "target_text");
  validate_user_params(request.params, config_.max_steps);
  check_codec(request.params, models_);
  load_input(input_png, request.params.resize);

  std::lock_guard lock(mutex_);
  if (!request.idempotency_key.empty()) {
    if (auto it = idempotency_.find(request.idempotency_key); it != idempotency_.end()) {
      return {it->second, false};
    }
  }
  if (stopping_) throw QueueFull("the service is shutting down");
  if (queue_.size() >= config_.queue_capacity) {
    throw QueueFull("queue holds " + std::to_string(queue_.size()) + " jobs");
  }

  JobRecord record;
  record.sequence = next_sequence_++;
  const std::string body = request_to_json(request);
  std::vector<char> digest_input(body.begin(), body.end());
  digest_input.insert(digest_input.end(), input_png.begin(), input_png.end());
  const std::string sequence = std::to_string(record.sequence);
  digest_input.insert(digest_input.end(), sequence.begin(), sequence.end());
  char id[32];
  std::snprintf(id, sizeof id, "j%06llu-%s", static_cast<unsigned long long>(record.sequence),
                nn::sha256_hex(digest_input).substr(0, 8).c_str());
  record.id = id;
  record.request = std::move(request);
  record.created_at = now_utc();
  record.steps_total = record.request.params.steps;

  store_.create(record, input_png);
  if (!record.request.idempotency_key.empty()) {
    idempotency_[record.request.idempotency_key] = record.id;
  }
  queue_.push_back(record.id);
  jobs_[record.id] = std::move(record);
  wake_.notify_one();
  return {id, true};
}

std::optional<JobRecord> JobService::get(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

std::vector<JobRecord> JobService::list() const {
  std::lock_guard lock(mutex_);
  std::vector<JobRecord> out;
  for (const auto& [id, record] : jobs_) out.push_back(record);
  std::sort(out.begin(), out.end(),
            [](const JobRecord& a, const JobRecord& b) { return a.sequence < b.sequence; });
  return out;
}

std::optional<std::string> JobService::artifact(const std::string& id,
                                                std::string_view file) const {
  {
    std::lock_guard lock(mutex_);
    if (jobs_.find(id) == jobs_.end()) return std::nullopt;
  }
  return store_.read(id, file);
}

std::string JobService::claim_locked() {
  std::string id = queue_.front();
  queue_.pop_front();
  JobRecord& record = jobs_.at(id);
  record.status = JobStatus::kRunning;
  record.started_at = now_utc();
  ++running_;
  peak_running_ = std::max(peak_running_, running_);
  store_.save_status(record);
  return id;
}

bool JobService::run_next() {
  std::string id;
  {
    std::lock_guard lock(mutex_);
    if (queue_.empty() || stopping_) return false;
    id = claim_locked();
  }
  execute(id);
  return true;
}

void JobService::worker_loop() {
  for (;;) {
    std::string id;
    {
      std::unique_lock lock(mutex_);
      wake_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (stopping_) return;
      id = claim_locked();
    }
    execute(id);
  }
}

void JobService::execute(const std::string& id) {
  JobRequest request;
  {
    std::lock_guard lock(mutex_);
    request = jobs_.at(id).request;
  }
  const int steps = request.params.steps;
  const StepObserver observer = [&](const StepState& state) {
    std::lock_guard lock(mutex_);
    if (stopping_) throw Interrupted{};
    JobRecord& record = jobs_.at(id);
    record.steps_done = steps - state.t + 1;
    if (state.trace != nullptr) record.last_trace = *state.trace;
    store_.save_status(record);
  };

  std::optional<EditResult> result;
  JobRecord outcome;
  {
    std::lock_guard lock(mutex_);
    outcome = jobs_.at(id);
  }
  try {
    const auto png = store_.read(id, "input.png");
    if (!png) throw Error("input.png is missing");
    const Image input = load_input(*png, request.params.resize);
    result = run_edit(input, request.positioning_text, request.target_text, request.params,
                      models_, observer);
  } catch (const Interrupted&) {
    fail(outcome, "interrupted", "the service stopped while the job was running");
  } catch (const GuidanceDivergence& e) {
    fail(outcome, "guidance-divergence", e.what(), e.step());
  } catch (const InvalidArgument& e) {
    fail(outcome, "invalid-argument", e.what());
  } catch (const std::exception& e) {
    fail(outcome, "internal", e.what());
  }

  if (result) {
    JobOutputs outputs;
    outputs.result_png = encode_png(result->output);
    outputs.mask_png = encode_png(result->mask);
    outputs.soft_mask_png = encode_png(result->soft_mask);
    outputs.trace_jsonl = trace_to_jsonl(result->trace);
    store_.save_outputs(id, outputs);
  }

  std::lock_guard lock(mutex_);
  JobRecord& record = jobs_.at(id);
  if (result) {
    record.status = result->no_op ? JobStatus::kNoOpMask : JobStatus::kDone;
    record.steps_done = steps;
    record.area_fraction = area_fraction(result->mask);
    record.finished_at = now_utc();
  } else {
    record.status = outcome.status;
    record.error_kind = outcome.error_kind;
    record.error = outcome.error;
    record.error_step = outcome.error_step;
    record.finished_at = outcome.finished_at;
  }
  store_.save_status(record);
  --running_;
}

MaskPreview JobService::preview(std::string_view input_png, std::string_view positioning_text,
                                int threshold, ResizePolicy resize) const {
  if (threshold < 0 || threshold > kMaxUserThreshold) {
    throw InvalidArgument("threshold", "must lie in [0, 255]");
  }
  const std::string text(positioning_text);
  check_prompt(*models_.text_encoder, text, "positioning_text");
  const Image image = load_input(input_png, resize);
  const SoftMask soft = segment(image, text, *models_.text_encoder, *models_.segmenter);
  const RegionMask mask = threshold_mask(soft, threshold);
  return {encode_png(soft), encode_png(mask), area_fraction(mask), threshold};
}

ServiceStats JobService::stats() const {
  std::lock_guard lock(mutex_);
  ServiceStats s;
  s.workers = config_.workers;
  s.queue_capacity = config_.queue_capacity;
  s.peak_running = peak_running_;
  for (const auto& [id, record] : jobs_) {
    switch (record.status) {
      case JobStatus::kQueued:
        ++s.queued;
        break;
      case JobStatus::kRunning:
        ++s.running;
        break;
      case JobStatus::kDone:
        ++s.done;
        break;
      case JobStatus::kFailed:
        ++s.failed;
        break;
      case JobStatus::kNoOpMask:
        ++s.no_op_mask;
        break;
    }
  }
  return s;
}

std::string job_to_json(const JobRecord& record) {
  using nlohmann::json;
  json j = json::parse(status_to_json(record));
  json request = json::parse(request_to_json(record.request));
  request.erase("idempotency_key");
  j["request"] = std::move(request);
  const std::string base = "/v1/jobs/" + record.id;
  j["links"] = {{"self", base},         {"result", base + "/result"}, {"mask", base + "/mask"},
                {"soft_mask", base + "/soft_mask"}, {"trace", base + "/trace"},
                {"request", base + "/request"},     {"input", base + "/input"}};
  return j.dump(2);
}

}  // namespace regionedit::service
