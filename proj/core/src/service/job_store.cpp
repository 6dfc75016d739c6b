#include "regionedit/service/job_store.hpp"

#include <algorithm>
#include <json.hpp>

#include "regionedit/nn/serialize.hpp"
#include "regionedit/params_json.hpp"

namespace regionedit::service {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view status_name(JobStatus status) {
  switch (status) {
    case JobStatus::kQueued:
      return "queued";
    case JobStatus::kRunning:
      return "running";
    case JobStatus::kDone:
      return "done";
    case JobStatus::kFailed:
      return "failed";
    case JobStatus::kNoOpMask:
      return "no-op-mask";
  }
  return "unknown";
}

JobStatus parse_status(std::string_view name) {
  for (JobStatus s : {JobStatus::kQueued, JobStatus::kRunning, JobStatus::kDone,
                      JobStatus::kFailed, JobStatus::kNoOpMask}) {
    if (status_name(s) == name) return s;
  }
  throw InvalidArgument("status", "unknown job status \"" + std::string(name) + "\"");
}

bool is_terminal(JobStatus status) {
  return status == JobStatus::kDone || status == JobStatus::kFailed ||
         status == JobStatus::kNoOpMask;
}

std::string request_to_json(const JobRequest& request) {
  json j = {{"positioning_text", request.positioning_text},
            {"target_text", request.target_text},
            {"params", json::parse(edit_params_to_json(request.params))},
            {"idempotency_key", request.idempotency_key}};
  return j.dump(2);
}

JobRequest request_from_json(std::string_view text) {
  const json j = json::parse(text);
  JobRequest r;
  r.positioning_text = j.at("positioning_text").get<std::string>();
  r.target_text = j.at("target_text").get<std::string>();
  r.params = edit_params_from_json(j.at("params").dump(), EditParams{});
  r.idempotency_key = j.value("idempotency_key", "");
  return r;
}

std::string status_to_json(const JobRecord& r) {
  json j = {{"id", r.id},
            {"sequence", r.sequence},
            {"status", status_name(r.status)},
            {"created_at", r.created_at},
            {"started_at", r.started_at},
            {"finished_at", r.finished_at},
            {"steps_total", r.steps_total},
            {"steps_done", r.steps_done}};
  if (r.last_trace) {
    j["last_trace"] = {{"t", r.last_trace->t},
                       {"clip_loss", r.last_trace->clip_loss},
                       {"nerp_loss", r.last_trace->nerp_loss},
                       {"latent_norm", r.last_trace->latent_norm}};
  }
  if (r.area_fraction) j["area_fraction"] = *r.area_fraction;
  if (!r.error_kind.empty()) {
    j["error"] = {{"kind", r.error_kind}, {"message", r.error}};
    if (r.error_step) j["error"]["step"] = *r.error_step;
  }
  return j.dump(2);
}

void status_from_json(std::string_view text, JobRecord& r) {
  const json j = json::parse(text);
  r.id = j.at("id").get<std::string>();
  r.sequence = j.at("sequence").get<std::uint64_t>();
  r.status = parse_status(j.at("status").get<std::string>());
  r.created_at = j.at("created_at").get<std::string>();
  r.started_at = j.at("started_at").get<std::string>();
  r.finished_at = j.at("finished_at").get<std::string>();
  r.steps_total = j.at("steps_total").get<int>();
  r.steps_done = j.at("steps_done").get<int>();
  r.last_trace.reset();
  if (j.contains("last_trace")) {
    const json& t = j.at("last_trace");
    r.last_trace = TraceEntry{t.at("t").get<int>(), t.at("clip_loss").get<double>(),
                              t.at("nerp_loss").get<double>(), t.at("latent_norm").get<double>()};
  }
  r.area_fraction.reset();
  if (j.contains("area_fraction")) r.area_fraction = j.at("area_fraction").get<double>();
  r.error_kind.clear();
  r.error.clear();
  r.error_step.reset();
  if (j.contains("error")) {
    r.error_kind = j.at("error").at("kind").get<std::string>();
    r.error = j.at("error").at("message").get<std::string>();
    if (j.at("error").contains("step")) r.error_step = j.at("error").at("step").get<int>();
  }
}

JobStore::JobStore(fs::path root) : jobs_(std::move(root) / "jobs") {
  fs::create_directories(jobs_);
}

fs::path JobStore::job_dir(const std::string& id) const { return jobs_ / id; }

void JobStore::create(const JobRecord& record, std::string_view input_png) {
  const fs::path dir = job_dir(record.id);
  fs::create_directories(dir);
  nn::write_file_atomic(dir / "input.png", std::string(input_png));
  nn::write_file_atomic(dir / "request.json", request_to_json(record.request) + "\n");
  nn::write_file_atomic(dir / "status.json", status_to_json(record) + "\n");
}

void JobStore::save_status(const JobRecord& record) {
  nn::write_file_atomic(job_dir(record.id) / "status.json", status_to_json(record) + "\n");
}

void JobStore::save_outputs(const std::string& id, const JobOutputs& outputs) {
  const fs::path dir = job_dir(id);
  nn::write_file_atomic(dir / "result.png", outputs.result_png);
  nn::write_file_atomic(dir / "mask.png", outputs.mask_png);
  nn::write_file_atomic(dir / "soft_mask.png", outputs.soft_mask_png);
  nn::write_file_atomic(dir / "trace.jsonl", outputs.trace_jsonl);
}

std::optional<std::string> JobStore::read(const std::string& id, std::string_view file) const {
  const fs::path path = job_dir(id) / file;
  if (!fs::is_regular_file(path)) return std::nullopt;
  const std::vector<char> bytes = nn::read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

std::vector<JobRecord> JobStore::load_all() const {
  std::vector<JobRecord> out;
  for (const auto& entry : fs::directory_iterator(jobs_)) {
    if (!entry.is_directory()) continue;
    const std::string id = entry.path().filename().string();
    const auto status = read(id, "status.json");
    const auto request = read(id, "request.json");
    if (!status || !request) continue;
    JobRecord r;
    r.request = request_from_json(*request);
    status_from_json(*status, r);
    out.push_back(std::move(r));
  }
  std::sort(out.begin(), out.end(),
            [](const JobRecord& a, const JobRecord& b) { return a.sequence < b.sequence; });
  return out;
}

}  // namespace regionedit::service
