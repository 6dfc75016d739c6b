// Service contract: job lifecycle, persistence, recovery and the HTTP surface.
#include <doctest.h>

#include <atomic>
#include <chrono>
#include <thread>

#include <json.hpp>

#include "regionedit/image_io.hpp"
#include "regionedit/nn/serialize.hpp"
#include "regionedit/params_json.hpp"
#include "regionedit/service/server.hpp"
#include "regionedit/toyzoo/bundle.hpp"
#include "test_support.hpp"

// After the library headers: resolv.h (pulled in by httplib) defines macros
// that collide with Eigen identifiers.
#include <httplib.h>

using namespace regionedit;
using namespace regionedit::service;
using nlohmann::json;
using regionedit::testing::TempDir;

namespace fs = std::filesystem;

namespace {

const ModelBundle& models() {
  static const ModelBundle b = toyzoo::make_untrained_bundle(21);
  return b;
}

std::string test_png(std::uint64_t seed = 1, int size = 32) {
  return encode_png(regionedit::testing::random_image({size, size, 3}, seed));
}

JobRequest request(int steps = 4, int threshold = 0, std::string key = {}) {
  JobRequest r;
  r.positioning_text = "a red square";
  r.target_text = "a blue circle";
  r.params.steps = steps;
  r.params.threshold = threshold;
  r.params.seed = 5;
  r.idempotency_key = std::move(key);
  return r;
}

ServiceConfig config_for(const fs::path& dir, int workers = 0) {
  ServiceConfig c;
  c.data_dir = dir;
  c.workers = workers;
  c.port = 0;
  return c;
}

JobRecord wait_terminal(const JobService& svc, const std::string& id, double seconds = 60) {
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(seconds);
  for (;;) {
    const auto r = svc.get(id);
    REQUIRE(r.has_value());
    if (is_terminal(r->status)) return *r;
    REQUIRE(std::chrono::steady_clock::now() < deadline);
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
}

std::string field_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const InvalidArgument& e) {
    return e.field();
  }
  return "<no error>";
}

}  // namespace

TEST_CASE("job lifecycle through the queue") {
  TempDir dir;
  JobService svc(models(), config_for(dir.path()));
  const SubmitResult s = svc.submit(test_png(), request(6));
  CHECK(s.created);
  CHECK(svc.get(s.id)->status == JobStatus::kQueued);
  CHECK(svc.artifact(s.id, "result.png") == std::nullopt);

  CHECK(svc.run_next());
  CHECK_FALSE(svc.run_next());
  const JobRecord r = *svc.get(s.id);
  CHECK(r.status == JobStatus::kDone);
  CHECK(r.steps_done == 6);
  CHECK(r.steps_total == 6);
  CHECK(r.area_fraction == 1.0);
  REQUIRE(r.last_trace.has_value());
  CHECK(r.last_trace->t == 1);
  CHECK_FALSE(r.started_at.empty());
  CHECK_FALSE(r.finished_at.empty());

  const Image result = decode_png(*svc.artifact(s.id, "result.png"));
  CHECK(result.shape() == Shape3{32, 32, 3});
  CHECK(decode_mask_png(*svc.artifact(s.id, "mask.png")).size() == 1024);
  const std::string trace = *svc.artifact(s.id, "trace.jsonl");
  CHECK(std::count(trace.begin(), trace.end(), '\n') == 6);
  const JobRequest stored = request_from_json(*svc.artifact(s.id, "request.json"));
  CHECK(stored.params == request(6).params);
  CHECK(*svc.artifact(s.id, "input.png") == test_png());

  const json j = json::parse(job_to_json(r));
  CHECK(j.at("status") == "done");
  CHECK(j.at("request").at("target_text") == "a blue circle");
  CHECK_FALSE(j.at("request").contains("idempotency_key"));
  CHECK(j.at("links").at("result") == "/v1/jobs/" + s.id + "/result");

  CHECK(svc.stats().done == 1);
  CHECK(svc.get("nope") == std::nullopt);
  CHECK(svc.artifact("nope", "result.png") == std::nullopt);
}

TEST_CASE("jobs run in submission order") {
  TempDir dir;
  JobService svc(models(), config_for(dir.path()));
  const auto a = svc.submit(test_png(1), request(2)).id;
  const auto b = svc.submit(test_png(2), request(2)).id;
  CHECK(svc.get(a)->sequence < svc.get(b)->sequence);
  svc.run_next();
  CHECK(svc.get(a)->status == JobStatus::kDone);
  CHECK(svc.get(b)->status == JobStatus::kQueued);
  const auto list = svc.list();
  REQUIRE(list.size() == 2);
  CHECK(list[0].id == a);
}

TEST_CASE("idempotency keys replay the original job") {
  TempDir dir;
  JobService svc(models(), config_for(dir.path()));
  const SubmitResult first = svc.submit(test_png(), request(3, 0, "key-1"));
  const SubmitResult again = svc.submit(test_png(9), request(5, 0, "key-1"));
  CHECK(again.id == first.id);
  CHECK_FALSE(again.created);
  const SubmitResult other = svc.submit(test_png(), request(3, 0, "key-2"));
  CHECK(other.id != first.id);
  const SubmitResult unkeyed = svc.submit(test_png(), request(3));
  CHECK(unkeyed.id != first.id);
  CHECK(svc.list().size() == 3);
}

TEST_CASE("submissions are validated before queueing") {
  TempDir dir;
  ServiceConfig config = config_for(dir.path());
  config.max_image_bytes = 8000;
  JobService svc(models(), config);

  CHECK(field_of([&] { svc.submit(test_png(), request(4, 300)); }) == "threshold");
  CHECK(field_of([&] { svc.submit(test_png(), request(0)); }) == "steps");
  CHECK(field_of([&] { svc.submit(test_png(), request(1001)); }) == "steps");
  JobRequest r = request();
  r.positioning_text.clear();
  CHECK(field_of([&] { svc.submit(test_png(), r); }) == "positioning_text");
  r = request();
  r.target_text = "a purple hexagon";
  CHECK(field_of([&] { svc.submit(test_png(), r); }) == "target_text");
  r = request();
  r.params.codec = "identity";
  CHECK(field_of([&] { svc.submit(test_png(), r); }) == "codec");
  CHECK(field_of([&] { svc.submit("not a png", request()); }) == "image");
  CHECK(field_of([&] { svc.submit(test_png(1, 24), request()); }) == "image");
  r = request();
  r.params.resize = ResizePolicy::kResize;
  CHECK_NOTHROW(svc.submit(test_png(1, 24), r));
  CHECK_THROWS_AS(svc.submit(test_png(1, 64), request()), PayloadTooLarge);
  CHECK(svc.list().size() == 1);
}

TEST_CASE("a full queue refuses new jobs") {
  TempDir dir;
  ServiceConfig config = config_for(dir.path());
  config.queue_capacity = 2;
  JobService svc(models(), config);
  svc.submit(test_png(1), request());
  svc.submit(test_png(2), request());
  CHECK_THROWS_AS(svc.submit(test_png(3), request()), QueueFull);
  svc.run_next();
  CHECK_NOTHROW(svc.submit(test_png(3), request()));
}

TEST_CASE("divergent and empty-mask jobs reach their terminal states") {
  TempDir dir;
  JobService svc(models(), config_for(dir.path()));
  JobRequest diverge = request(6);
  diverge.params.guidance.grad_scale = 1e300;
  const auto bad = svc.submit(test_png(), diverge).id;
  const auto empty = svc.submit(test_png(), request(3, 255)).id;
  svc.run_next();
  svc.run_next();

  const JobRecord b = *svc.get(bad);
  CHECK(b.status == JobStatus::kFailed);
  CHECK(b.error_kind == "guidance-divergence");
  CHECK(b.error_step.has_value());
  CHECK(svc.artifact(bad, "result.png") == std::nullopt);

  const JobRecord e = *svc.get(empty);
  CHECK(e.status == JobStatus::kNoOpMask);
  CHECK(e.area_fraction == 0.0);
  CHECK(svc.artifact(empty, "result.png").has_value());
  CHECK(svc.stats().failed == 1);
  CHECK(svc.stats().no_op_mask == 1);
}

TEST_CASE("restart reloads terminal jobs unchanged and recovers the rest") {
  TempDir dir;
  std::string done_id;
  std::string queued_id;
  std::string running_id;
  std::string done_json;
  std::map<std::string, std::string> done_files;
  {
    JobService svc(models(), config_for(dir.path()));
    done_id = svc.submit(test_png(1), request(3, 0, "k-done")).id;
    svc.run_next();
    queued_id = svc.submit(test_png(2), request(3)).id;
    running_id = svc.submit(test_png(3), request(3)).id;
    done_json = job_to_json(*svc.get(done_id));
    for (const char* f : {"result.png", "mask.png", "soft_mask.png", "trace.jsonl",
                          "request.json", "input.png", "status.json"}) {
      done_files[f] = *svc.artifact(done_id, f);
    }
  }
  // Simulate a crash mid-run: the third job's status says running.
  {
    JobStore store(dir.path());
    JobRecord r;
    r.request = request_from_json(*store.read(running_id, "request.json"));
    status_from_json(*store.read(running_id, "status.json"), r);
    r.status = JobStatus::kRunning;
    r.steps_done = 1;
    store.save_status(r);
  }
  // And an interrupted submission with no status file.
  fs::create_directories(dir / "jobs" / "j999999-partial");
  nn::write_file_atomic(dir / "jobs" / "j999999-partial" / "input.png", test_png());

  JobService svc(models(), config_for(dir.path()));
  CHECK(svc.list().size() == 3);
  CHECK(job_to_json(*svc.get(done_id)) == done_json);
  for (const auto& [file, bytes] : done_files) CHECK(*svc.artifact(done_id, file) == bytes);

  const JobRecord interrupted = *svc.get(running_id);
  CHECK(interrupted.status == JobStatus::kFailed);
  CHECK(interrupted.error_kind == "interrupted");

  CHECK(svc.get(queued_id)->status == JobStatus::kQueued);
  CHECK(svc.run_next());
  CHECK(svc.get(queued_id)->status == JobStatus::kDone);
  CHECK_FALSE(svc.run_next());

  const SubmitResult replay = svc.submit(test_png(1), request(3, 0, "k-done"));
  CHECK(replay.id == done_id);
  CHECK_FALSE(replay.created);
  const SubmitResult fresh = svc.submit(test_png(4), request(3));
  CHECK(svc.get(fresh.id)->sequence > svc.get(running_id)->sequence);
}

TEST_CASE("readers never observe partial status files") {
  TempDir dir;
  JobService svc(models(), config_for(dir.path(), 1));
  const std::string id = svc.submit(test_png(), request(40)).id;
  const fs::path status = dir / "jobs" / id / "status.json";
  int reads = 0;
  int bad = 0;
  int last_done = -1;
  bool regressed = false;
  for (;;) {
    std::string text;
    try {
      const auto bytes = nn::read_file(status);
      text.assign(bytes.begin(), bytes.end());
    } catch (const Error&) {
      ++bad;
      continue;
    }
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception&) {
      ++bad;
      continue;
    }
    ++reads;
    const int done = j.at("steps_done").get<int>();
    regressed |= done < last_done;
    last_done = done;
    if (is_terminal(parse_status(j.at("status").get<std::string>()))) break;
  }
  CHECK(bad == 0);
  CHECK(reads > 1);
  CHECK_FALSE(regressed);
  CHECK(last_done == 40);
  for (const auto& entry : fs::directory_iterator(dir / "jobs" / id)) {
    CHECK(entry.path().filename().string().find(".tmp") == std::string::npos);
  }
}

TEST_CASE("worker count caps concurrent jobs") {
  for (int workers : {1, 2}) {
    TempDir dir;
    JobService svc(models(), config_for(dir.path(), workers));
    std::vector<std::string> ids;
    for (int i = 0; i < 5; ++i) ids.push_back(svc.submit(test_png(i), request(6)).id);
    std::size_t max_seen = 0;
    bool finished = false;
    while (!finished) {
      max_seen = std::max(max_seen, svc.stats().running);
      finished = true;
      for (const auto& id : ids) finished &= is_terminal(svc.get(id)->status);
    }
    CHECK(max_seen <= static_cast<std::size_t>(workers));
    CHECK(svc.stats().peak_running <= static_cast<std::size_t>(workers));
    CHECK(svc.stats().peak_running >= 1);
    CHECK(svc.stats().done == 5);
  }
}

TEST_CASE("jobs with equal inputs produce equal outputs") {
  TempDir dir;
  JobService svc(models(), config_for(dir.path()));
  const auto a = svc.submit(test_png(), request(5)).id;
  const auto b = svc.submit(test_png(), request(5)).id;
  svc.run_next();
  svc.run_next();
  CHECK(*svc.artifact(a, "result.png") == *svc.artifact(b, "result.png"));
  CHECK(*svc.artifact(a, "trace.jsonl") == *svc.artifact(b, "trace.jsonl"));
}

TEST_CASE("mask preview") {
  TempDir dir;
  JobService svc(models(), config_for(dir.path()));
  const std::string png = test_png(7);
  const MaskPreview a = svc.preview(png, "a red square", 150, ResizePolicy::kReject);
  const MaskPreview b = svc.preview(png, "a red square", 150, ResizePolicy::kReject);
  CHECK(a.soft_mask_png == b.soft_mask_png);
  CHECK(a.binary_mask_png == b.binary_mask_png);
  CHECK(svc.preview(png, "a red square", 0, ResizePolicy::kReject).area_fraction == 1.0);

  double previous = 1.0;
  for (int k = 0; k <= 255; ++k) {
    const double area = svc.preview(png, "a red square", k, ResizePolicy::kReject).area_fraction;
    CHECK(area <= previous);
    previous = area;
  }
  CHECK(field_of([&] { svc.preview(png, "a red square", 256, ResizePolicy::kReject); }) ==
        "threshold");
  CHECK(field_of([&] { svc.preview(png, "", 10, ResizePolicy::kReject); }) == "positioning_text");
  CHECK(svc.list().empty());
}

TEST_CASE("environment overrides port and data dir") {
  ::setenv("REGION_EDIT_PORT", "9123", 1);
  ::setenv("REGION_EDIT_DATA_DIR", "/tmp/elsewhere", 1);
  const ServiceConfig c = ServiceConfig::with_environment({});
  CHECK(c.port == 9123);
  CHECK(c.data_dir == "/tmp/elsewhere");
  ::setenv("REGION_EDIT_PORT", "http", 1);
  CHECK_THROWS_AS(ServiceConfig::with_environment({}), InvalidArgument);
  ::unsetenv("REGION_EDIT_PORT");
  ::unsetenv("REGION_EDIT_DATA_DIR");
  CHECK(ServiceConfig::with_environment({}).port == 8080);
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

struct Server {
  explicit Server(const fs::path& dir, int workers = 1, std::size_t max_bytes = 4u << 20) {
    ServiceConfig config = config_for(dir, workers);
    config.max_image_bytes = max_bytes;
    service = std::make_shared<JobService>(models(), config);
    http = std::make_unique<HttpServer>(service);
    port = http->start();
    client = std::make_unique<httplib::Client>("127.0.0.1", port);
    client->set_read_timeout(60, 0);
  }
  ~Server() { http->stop(); }

  std::shared_ptr<JobService> service;
  std::unique_ptr<HttpServer> http;
  std::unique_ptr<httplib::Client> client;
  int port = 0;
};

httplib::MultipartFormDataItems job_form(const std::string& png, const json& params) {
  return {{"image", png, "input.png", "image/png"},
          {"positioning_text", "a red square", "", ""},
          {"target_text", "a blue circle", "", ""},
          {"params", params.dump(), "", "application/json"}};
}

json wait_http(httplib::Client& client, const std::string& id) {
  for (int i = 0; i < 6000; ++i) {
    auto res = client.Get("/v1/jobs/" + id);
    REQUIRE(res);
    const json j = json::parse(res->body);
    if (is_terminal(parse_status(j.at("status").get<std::string>()))) return j;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  FAIL("job did not finish");
  return {};
}

}  // namespace

TEST_CASE("HTTP job lifecycle") {
  TempDir dir;
  Server s(dir.path());
  const json params = {{"steps", 5}, {"threshold", 0}, {"seed", 3}};

  auto res = s.client->Post("/v1/jobs", job_form(test_png(), params));
  REQUIRE(res);
  CHECK(res->status == 202);
  const json created = json::parse(res->body);
  const std::string id = created.at("job_id");
  CHECK(created.at("created") == true);
  CHECK(res->get_header_value("Location") == "/v1/jobs/" + id);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");

  const json done = wait_http(*s.client, id);
  CHECK(done.at("status") == "done");
  CHECK(done.at("steps_done") == 5);
  CHECK(done.at("request").at("params").at("steps") == 5);

  res = s.client->Get("/v1/jobs/" + id + "/result");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Content-Type") == "image/png");
  CHECK(res->body == *s.service->artifact(id, "result.png"));

  for (const char* part : {"mask", "soft_mask", "trace", "request", "input"}) {
    res = s.client->Get("/v1/jobs/" + id + "/" + part);
    REQUIRE(res);
    CHECK(res->status == 200);
  }

  res = s.client->Get("/v1/jobs");
  REQUIRE(res);
  CHECK(json::parse(res->body).at("jobs").size() == 1);
  res = s.client->Get("/v1/stats");
  REQUIRE(res);
  CHECK(json::parse(res->body).at("done") == 1);
}

TEST_CASE("HTTP parameters may carry the prompts") {
  TempDir dir;
  Server s(dir.path());
  const json params = {{"steps", 2}, {"threshold", 0}, {"positioning_text", "a red square"},
                       {"target_text", "a green circle"}};
  httplib::MultipartFormDataItems form{{"image", test_png(), "x.png", "image/png"},
                                       {"params", params.dump(), "", ""}};
  auto res = s.client->Post("/v1/jobs", form);
  REQUIRE(res);
  CHECK(res->status == 202);
  const std::string id = json::parse(res->body).at("job_id");
  CHECK(s.service->get(id)->request.target_text == "a green circle");
}

TEST_CASE("HTTP idempotent replay") {
  TempDir dir;
  Server s(dir.path());
  const httplib::Headers headers{{"Idempotency-Key", "abc"}};
  const json params = {{"steps", 2}, {"threshold", 0}};
  auto first = s.client->Post("/v1/jobs", headers, job_form(test_png(), params));
  auto second = s.client->Post("/v1/jobs", headers, job_form(test_png(), params));
  REQUIRE(first);
  REQUIRE(second);
  CHECK(first->status == 202);
  CHECK(second->status == 200);
  CHECK(json::parse(first->body).at("job_id") == json::parse(second->body).at("job_id"));
  CHECK(json::parse(second->body).at("created") == false);
}

TEST_CASE("HTTP errors") {
  TempDir dir;
  Server s(dir.path(), 0, 8000);

  auto res = s.client->Post("/v1/jobs", job_form(test_png(), {{"threshold", 300}}));
  REQUIRE(res);
  CHECK(res->status == 400);
  json err = json::parse(res->body).at("error");
  CHECK(err.at("field") == "threshold");
  CHECK(err.at("kind") == "invalid-argument");

  res = s.client->Post("/v1/jobs", job_form(test_png(), {{"stepz", 3}}));
  REQUIRE(res);
  CHECK(res->status == 400);
  CHECK(json::parse(res->body).at("error").at("field") == "stepz");

  res = s.client->Post("/v1/jobs", job_form(test_png(1, 64), json::object()));
  REQUIRE(res);
  CHECK(res->status == 413);

  res = s.client->Post("/v1/jobs", "{}", "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);

  res = s.client->Get("/v1/jobs/unknown");
  REQUIRE(res);
  CHECK(res->status == 404);
  res = s.client->Get("/v1/jobs/unknown/result");
  REQUIRE(res);
  CHECK(res->status == 404);

  // Workers are off, so the job stays queued.
  res = s.client->Post("/v1/jobs", job_form(test_png(), {{"steps", 6}}));
  REQUIRE(res);
  const std::string queued = json::parse(res->body).at("job_id");
  res = s.client->Get("/v1/jobs/" + queued + "/result");
  REQUIRE(res);
  CHECK(res->status == 404);
  CHECK(json::parse(res->body).at("error").at("kind") == "not-ready");

  s.service->run_next();
  res = s.client->Post("/v1/jobs", job_form(test_png(), {{"steps", 6}, {"threshold", 0}, {"grad_scale", 1e300}}));
  REQUIRE(res);
  const std::string failing = json::parse(res->body).at("job_id");
  s.service->run_next();
  res = s.client->Get("/v1/jobs/" + failing + "/result");
  REQUIRE(res);
  CHECK(res->status == 409);
  CHECK(json::parse(res->body).at("error").at("kind") == "guidance-divergence");
}

TEST_CASE("HTTP CORS preflight, health and schema") {
  TempDir dir;
  Server s(dir.path(), 0);
  auto res = s.client->Options("/v1/jobs");
  REQUIRE(res);
  CHECK(res->status == 204);
  CHECK(res->get_header_value("Access-Control-Allow-Origin") == "*");
  CHECK(res->get_header_value("Access-Control-Allow-Headers").find("Idempotency-Key") !=
        std::string::npos);

  res = s.client->Get("/v1/health");
  REQUIRE(res);
  CHECK(json::parse(res->body).at("status") == "ok");

  res = s.client->Get("/v1/schema");
  REQUIRE(res);
  const json schema = json::parse(res->body);
  CHECK(schema.contains("edit_params"));
  CHECK(schema.contains("edit_job"));
  CHECK(schema.at("edit_params").at("properties").at("threshold").at("maximum") == 255);
}

TEST_CASE("HTTP mask preview") {
  TempDir dir;
  Server s(dir.path(), 0);
  httplib::MultipartFormDataItems form{{"image", test_png(4), "x.png", "image/png"},
                                       {"positioning_text", "a red square", "", ""},
                                       {"threshold", "0", "", ""}};
  auto a = s.client->Post("/v1/mask/preview", form);
  auto b = s.client->Post("/v1/mask/preview", form);
  REQUIRE(a);
  REQUIRE(b);
  CHECK(a->status == 200);
  CHECK(a->body == b->body);
  const json j = json::parse(a->body);
  CHECK(j.at("area_fraction") == 1.0);
  CHECK(j.at("threshold") == 0);
  CHECK_FALSE(j.at("binary_mask").get<std::string>().empty());

  form[2].content = "256";
  auto bad = s.client->Post("/v1/mask/preview", form);
  REQUIRE(bad);
  CHECK(bad->status == 400);
  CHECK(json::parse(bad->body).at("error").at("field") == "threshold");
  CHECK(s.service->list().empty());
}

TEST_CASE("HTTP metrics") {
  TempDir dir;
  Server s(dir.path(), 0);
  const std::string empty_mask = encode_png(RegionMask({32, 32}));
  httplib::MultipartFormDataItems form{{"prompt", "a red square", "", ""}};
  for (int i = 0; i < 3; ++i) {
    const std::string png = test_png(static_cast<std::uint64_t>(i));
    form.push_back({"edited", png, "e" + std::to_string(i) + ".png", "image/png"});
    form.push_back({"original", png, "o.png", "image/png"});
    form.push_back({"mask", empty_mask, "m.png", "image/png"});
  }
  auto res = s.client->Post("/v1/metrics", form);
  REQUIRE(res);
  CHECK(res->status == 200);
  const json report = json::parse(res->body);
  CHECK(report.at("preservation_lpips") == 0.0);
  CHECK(report.at("per_image").size() == 3);
  CHECK(report.at("per_image")[1].at("name") == "e1.png");

  form.pop_back();
  res = s.client->Post("/v1/metrics", form);
  REQUIRE(res);
  CHECK(res->status == 400);
}
