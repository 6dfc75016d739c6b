#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "regionedit/sampler.hpp"

namespace regionedit::service {

enum class JobStatus { kQueued, kRunning, kDone, kFailed, kNoOpMask };

std::string_view status_name(JobStatus status);
JobStatus parse_status(std::string_view name);
bool is_terminal(JobStatus status);

struct JobRequest {
  std::string positioning_text;
  std::string target_text;
  EditParams params;
  std::string idempotency_key;
};

struct JobRecord {
  std::string id;
  std::uint64_t sequence = 0;  // submission order, used to rebuild the FIFO queue
  JobStatus status = JobStatus::kQueued;
  JobRequest request;
  std::string created_at;
  std::string started_at;
  std::string finished_at;
  int steps_total = 0;
  int steps_done = 0;
  std::optional<TraceEntry> last_trace;
  std::optional<double> area_fraction;
  std::string error_kind;
  std::string error;
  std::optional<int> error_step;
};

struct JobOutputs {
  std::string result_png;
  std::string mask_png;
  std::string soft_mask_png;
  std::string trace_jsonl;
};

// Directory store: <root>/jobs/<id>/{request.json, status.json, input.png,
// result.png, mask.png, soft_mask.png, trace.jsonl}. Every file is written
// to a temporary sibling and renamed into place. status.json is written
// last on creation and after the outputs on completion, so a record that
// reports "done" always has its result on disk.
class JobStore {
 public:
  explicit JobStore(std::filesystem::path root);

  void create(const JobRecord& record, std::string_view input_png);
  void save_status(const JobRecord& record);
  void save_outputs(const std::string& id, const JobOutputs& outputs);

  // Records in submission order. Directories without a status file
  // (interrupted submissions) are skipped.
  std::vector<JobRecord> load_all() const;

  std::optional<std::string> read(const std::string& id, std::string_view file) const;
  std::filesystem::path job_dir(const std::string& id) const;

 private:
  std::filesystem::path jobs_;
};

// JSON forms shared by the store and the HTTP layer.
std::string request_to_json(const JobRequest& request);
JobRequest request_from_json(std::string_view json);
std::string status_to_json(const JobRecord& record);
// Restores status fields into `record` (the request part is untouched).
void status_from_json(std::string_view json, JobRecord& record);

}  // namespace regionedit::service
