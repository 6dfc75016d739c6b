// Eigen-based headers first: resolv.h, pulled in by httplib, defines _res.
#include "regionedit/image_io.hpp"
#include "regionedit/metrics.hpp"
#include "regionedit/params_json.hpp"
#include "regionedit/service/server.hpp"

#include <openssl/evp.h>

#include <httplib.h>
#include <json.hpp>

namespace regionedit::service {

namespace {

using nlohmann::json;

constexpr const char* kJson = "application/json";

std::string base64(const std::string& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(2), kJson);
}

void send_error(httplib::Response& res, int status, const std::string& kind,
                const std::string& message, const std::string& field = {}) {
  json error = {{"kind", kind}, {"message", message}};
  if (!field.empty()) error["field"] = field;
  send_json(res, status, {{"error", error}});
}

std::optional<std::string> form_value(const httplib::Request& req, const std::string& key) {
  if (!req.has_file(key)) return std::nullopt;
  return req.get_file_value(key).content;
}

std::string require_form(const httplib::Request& req, const std::string& key) {
  auto v = form_value(req, key);
  if (!v) throw InvalidArgument(key, "missing form field");
  return *v;
}

int parse_int_field(const std::string& text, const std::string& field) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw InvalidArgument(field, "expected an integer");
  }
}

ResizePolicy parse_resize(const std::optional<std::string>& text) {
  if (!text || *text == "reject") return ResizePolicy::kReject;
  if (*text == "resize") return ResizePolicy::kResize;
  throw InvalidArgument("resize", "expected \"resize\" or \"reject\"");
}

// Runs `body`, turning library errors into JSON error responses.
template <class F>
void guarded(httplib::Response& res, F&& body) {
  try {
    body();
  } catch (const InvalidArgument& e) {
    send_error(res, 400, "invalid-argument", e.what(), e.field());
  } catch (const PayloadTooLarge& e) {
    send_error(res, 413, "payload-too-large", e.what());
  } catch (const QueueFull& e) {
    send_error(res, 503, "queue-full", e.what());
  } catch (const ShapeMismatch& e) {
    send_error(res, 400, "shape-mismatch", e.what());
  } catch (const DegenerateEmbedding& e) {
    send_error(res, 400, "degenerate-embedding", e.what());
  }
}

JobRequest parse_job_request(const httplib::Request& req, const EditParams& defaults) {
  JobRequest request;
  json extras = json::object();
  if (auto params = form_value(req, "params")) {
    request.params = edit_params_from_json(*params, defaults, {"positioning_text", "target_text"});
    extras = json::parse(*params);
  } else {
    request.params = defaults;
  }
  for (const char* key : {"positioning_text", "target_text"}) {
    std::string value;
    if (auto field = form_value(req, key)) {
      value = *field;
    } else if (extras.contains(key)) {
      if (!extras[key].is_string()) throw InvalidArgument(key, "expected a string");
      value = extras[key].get<std::string>();
    } else {
      throw InvalidArgument(key, "missing");
    }
    (std::string_view(key) == "positioning_text" ? request.positioning_text
                                                  : request.target_text) = value;
  }
  request.idempotency_key = req.get_header_value("Idempotency-Key");
  return request;
}

json stats_json(const ServiceStats& s) {
  return {{"workers", s.workers},       {"queue_capacity", s.queue_capacity},
          {"queued", s.queued},         {"running", s.running},
          {"done", s.done},             {"failed", s.failed},
          {"no_op_mask", s.no_op_mask}, {"peak_running", s.peak_running}};
}

}  // namespace

std::string schema_json() {
  auto number = [](double fallback) {
    return json{{"type", "number"}, {"minimum", 0}, {"default", fallback}};
  };
  const json params = {
      {"$id", "edit-params"},
      {"type", "object"},
      {"additionalProperties", false},
      {"properties",
       {{"steps", {{"type", "integer"}, {"minimum", 1}, {"default", 100}}},
        {"cfg_scale", number(5.0)},
        {"grad_scale", number(150.0)},
        {"lambda1", number(0.5)},
        {"lambda2", number(0.5)},
        {"threshold",
         {{"type", "integer"}, {"minimum", 0}, {"maximum", kMaxUserThreshold}, {"default", 150}}},
        {"seed", {{"type", "integer"}, {"minimum", 0}, {"default", 0}}},
        {"codec", {{"type", "string"}, {"enum", {"toy", "identity"}}, {"default", "toy"}}},
        {"record_trajectory", {{"type", "boolean"}, {"default", true}}},
        {"blend", {{"type", "boolean"}, {"default", true}}},
        {"preservation_loss", {{"type", "boolean"}, {"default", true}}},
        {"resize", {{"type", "string"}, {"enum", {"reject", "resize"}}, {"default", "reject"}}},
        {"positioning_text", {{"type", "string"}}},
        {"target_text", {{"type", "string"}}}}}};
  const json trace = {{"type", "object"},
                      {"properties",
                       {{"t", {{"type", "integer"}}},
                        {"clip_loss", {{"type", "number"}}},
                        {"nerp_loss", {{"type", "number"}}},
                        {"latent_norm", {{"type", "number"}}}}}};
  const json job = {
      {"$id", "edit-job"},
      {"type", "object"},
      {"required", {"id", "status", "request", "steps_total", "steps_done", "created_at"}},
      {"properties",
       {{"id", {{"type", "string"}}},
        {"sequence", {{"type", "integer"}}},
        {"status", {{"type", "string"}, {"enum", {"queued", "running", "done", "failed", "no-op-mask"}}}},
        {"created_at", {{"type", "string"}}},
        {"started_at", {{"type", "string"}}},
        {"finished_at", {{"type", "string"}}},
        {"steps_total", {{"type", "integer"}}},
        {"steps_done", {{"type", "integer"}}},
        {"last_trace", trace},
        {"area_fraction", {{"type", "number"}, {"minimum", 0}, {"maximum", 1}}},
        {"error",
         {{"type", "object"},
          {"properties",
           {{"kind", {{"type", "string"}}},
            {"message", {{"type", "string"}}},
            {"step", {{"type", "integer"}}}}}}},
        {"request",
         {{"type", "object"},
          {"properties",
           {{"positioning_text", {{"type", "string"}}},
            {"target_text", {{"type", "string"}}},
            {"params", {{"$ref", "edit-params"}}}}}}},
        {"links", {{"type", "object"}}}}}};
  const json preview = {{"$id", "mask-preview"},
                        {"type", "object"},
                        {"properties",
                         {{"soft_mask", {{"type", "string"}, {"contentEncoding", "base64"}}},
                          {"binary_mask", {{"type", "string"}, {"contentEncoding", "base64"}}},
                          {"area_fraction", {{"type", "number"}}},
                          {"threshold", {{"type", "integer"}}}}}};
  return json({{"edit_params", params}, {"edit_job", job}, {"mask_preview", preview}}).dump(2);
}

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(std::shared_ptr<JobService> service)
    : service_(std::move(service)), impl_(std::make_unique<Impl>()) {
  httplib::Server& s = impl_->server;
  const ServiceConfig& config = service_->config();
  JobService& jobs = *service_;

  s.set_default_headers({{"Access-Control-Allow-Origin", config.cors_origin},
                         {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                         {"Access-Control-Allow-Headers", "Content-Type, Idempotency-Key"}});
  // Room for several images in one metrics upload; single images are
  // checked against max_image_bytes by the service.
  s.set_payload_max_length(config.max_image_bytes * 64 + (1u << 20));
  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string message = "unknown error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      message = e.what();
    } catch (...) {
    }
    send_error(res, 500, "internal", message);
  });
  if (!config.studio_dir.empty()) s.set_mount_point("/studio", config.studio_dir.string());

  s.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  s.Get("/v1/health", [&jobs](const httplib::Request&, httplib::Response& res) {
    json components = json::array();
    for (const ComponentInfo& c : jobs.models().components) {
      components.push_back({{"name", c.name}, {"version", c.version}, {"content_hash", c.content_hash}});
    }
    send_json(res, 200, {{"status", "ok"}, {"components", components}});
  });

  s.Get("/v1/schema", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(schema_json(), kJson);
  });

  s.Get("/v1/stats", [&jobs](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, stats_json(jobs.stats()));
  });

  s.Post("/v1/jobs", [&jobs, &config](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      if (!req.is_multipart_form_data()) {
        throw InvalidArgument("body", "expected multipart/form-data");
      }
      const std::string image = require_form(req, "image");
      const SubmitResult r = jobs.submit(image, parse_job_request(req, config.defaults));
      res.set_header("Location", "/v1/jobs/" + r.id);
      const auto record = jobs.get(r.id);
      send_json(res, r.created ? 202 : 200,
                {{"job_id", r.id},
                 {"created", r.created},
                 {"status", record ? std::string(status_name(record->status)) : "queued"}});
    });
  });

  s.Get("/v1/jobs", [&jobs](const httplib::Request&, httplib::Response& res) {
    json list = json::array();
    for (const JobRecord& r : jobs.list()) list.push_back(json::parse(job_to_json(r)));
    send_json(res, 200, {{"jobs", list}});
  });

  s.Get(R"(/v1/jobs/([^/]+))", [&jobs](const httplib::Request& req, httplib::Response& res) {
    const auto record = jobs.get(req.matches[1]);
    if (!record) return send_error(res, 404, "not-found", "unknown job id");
    res.set_content(job_to_json(*record), kJson);
  });

  s.Get(R"(/v1/jobs/([^/]+)/result)", [&jobs](const httplib::Request& req, httplib::Response& res) {
    const auto record = jobs.get(req.matches[1]);
    if (!record) return send_error(res, 404, "not-found", "unknown job id");
    if (record->status == JobStatus::kFailed) {
      return send_error(res, 409, record->error_kind, record->error);
    }
    if (!is_terminal(record->status)) {
      return send_error(res, 404, "not-ready", "job is " + std::string(status_name(record->status)));
    }
    const auto png = jobs.artifact(record->id, "result.png");
    if (!png) return send_error(res, 404, "not-found", "result.png is missing");
    res.set_content(*png, "image/png");
  });

  s.Get(R"(/v1/jobs/([^/]+)/(mask|soft_mask|trace|request|input))",
        [&jobs](const httplib::Request& req, httplib::Response& res) {
          static const std::map<std::string, std::pair<std::string, std::string>> files = {
              {"mask", {"mask.png", "image/png"}},
              {"soft_mask", {"soft_mask.png", "image/png"}},
              {"trace", {"trace.jsonl", "application/x-ndjson"}},
              {"request", {"request.json", kJson}},
              {"input", {"input.png", "image/png"}}};
          const auto& [file, type] = files.at(req.matches[2]);
          const auto bytes = jobs.artifact(req.matches[1], file);
          if (!bytes) return send_error(res, 404, "not-found", file + " is not available");
          res.set_content(*bytes, type);
        });

  s.Post("/v1/mask/preview", [&jobs, &config](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      if (!req.is_multipart_form_data()) {
        throw InvalidArgument("body", "expected multipart/form-data");
      }
      const std::string image = require_form(req, "image");
      const std::string text = require_form(req, "positioning_text");
      const auto threshold_text = form_value(req, "threshold");
      const int threshold = threshold_text ? parse_int_field(*threshold_text, "threshold")
                                           : config.defaults.threshold;
      const MaskPreview p = jobs.preview(image, text, threshold, parse_resize(form_value(req, "resize")));
      send_json(res, 200,
                {{"soft_mask", base64(p.soft_mask_png)},
                 {"binary_mask", base64(p.binary_mask_png)},
                 {"area_fraction", p.area_fraction},
                 {"threshold", p.threshold}});
    });
  });

  s.Post("/v1/metrics", [&jobs, &config](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      if (!req.is_multipart_form_data()) {
        throw InvalidArgument("body", "expected multipart/form-data");
      }
      const std::string prompt = require_form(req, "prompt");
      auto images = [&](const std::string& key) {
        std::vector<Image> out;
        for (const auto& part : req.get_file_values(key)) {
          if (part.content.size() > config.max_image_bytes) {
            throw PayloadTooLarge(key + " image exceeds the size limit");
          }
          out.push_back(decode_png(part.content));
        }
        return out;
      };
      const std::vector<Image> edited = images("edited");
      const std::vector<Image> originals = images("original");
      std::vector<RegionMask> masks;
      for (const auto& part : req.get_file_values("mask")) masks.push_back(decode_mask_png(part.content));
      if (edited.empty()) throw InvalidArgument("edited", "at least one image is required");
      if (originals.size() != edited.size() || masks.size() != edited.size()) {
        throw InvalidArgument("original", "edited, original and mask counts must match");
      }
      const ModelBundle& m = jobs.models();
      const metrics::EncoderFeatures features(m.eval_image_encoder);
      metrics::EvaluationInputs inputs{edited, originals, masks, {}, prompt};
      for (const auto& part : req.get_file_values("edited")) inputs.names.push_back(part.filename);
      metrics::Evaluators evaluators;
      evaluators.text_encoder = m.eval_text_encoder.get();
      evaluators.image_encoder = m.eval_image_encoder.get();
      evaluators.perceptual = m.perceptual.get();
      evaluators.features = &features;
      res.set_content(metric_report_to_json(metrics::evaluate(inputs, evaluators)), kJson);
    });
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind() {
  const ServiceConfig& config = service_->config();
  if (config.port == 0) {
    port_ = impl_->server.bind_to_any_port(config.host);
  } else if (impl_->server.bind_to_port(config.host, config.port)) {
    port_ = config.port;
  } else {
    port_ = -1;
  }
  if (port_ <= 0) {
    throw Error("cannot bind " + config.host + ":" + std::to_string(config.port));
  }
  return port_;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

int HttpServer::start() {
  bind();
  thread_ = std::thread([this] { listen(); });
  impl_->server.wait_until_ready();
  return port_;
}

void HttpServer::stop() {
  impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace regionedit::service
