#include "regionedit/cli.hpp"

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <pthread.h>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "regionedit/calibration.hpp"
#include "regionedit/image_io.hpp"
#include "regionedit/metrics.hpp"
#include "regionedit/nn/serialize.hpp"
#include "regionedit/params_json.hpp"
#include "regionedit/sampler.hpp"
#include "regionedit/service/server.hpp"
#include "regionedit/toyzoo/bundle.hpp"

namespace regionedit::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kMaxSteps = 1000;
const std::vector<int> kSweepThresholds{0, 50, 100, 150, 200, 250};

// Values from --config. Flags override them; they override the
// environment, which overrides built-in defaults.
struct FileConfig {
  std::optional<std::string> bundle;
  std::optional<std::string> data_dir;
  std::optional<std::string> out_dir;
  std::optional<int> port;
  std::optional<int> workers;
  std::optional<std::string> defaults;  // EditParams JSON object
};

FileConfig read_config(const std::optional<std::string>& path) {
  FileConfig c;
  if (!path) return c;
  json j;
  try {
    const std::vector<char> text = nn::read_file(*path);
    j = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw InvalidArgument("config", std::string("malformed JSON: ") + e.what());
  } catch (const std::exception& e) {
    throw InvalidArgument("config", e.what());
  }
  if (!j.is_object()) throw InvalidArgument("config", "expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    auto string = [&, k = key](std::optional<std::string>& slot) {
      if (!value.is_string()) throw InvalidArgument("config." + k, "expected a string");
      slot = value.get<std::string>();
    };
    auto integer = [&, k = key](std::optional<int>& slot) {
      if (!value.is_number_integer()) throw InvalidArgument("config." + k, "expected an integer");
      slot = value.get<int>();
    };
    if (key == "bundle") {
      string(c.bundle);
    } else if (key == "data_dir") {
      string(c.data_dir);
    } else if (key == "out_dir") {
      string(c.out_dir);
    } else if (key == "port") {
      integer(c.port);
    } else if (key == "workers") {
      integer(c.workers);
    } else if (key == "defaults") {
      if (!value.is_object()) throw InvalidArgument("config.defaults", "expected an object");
      c.defaults = value.dump();
    } else {
      throw InvalidArgument("config." + key, "unknown key");
    }
  }
  return c;
}

std::string resolve_bundle(const std::optional<std::string>& flag, const FileConfig& config) {
  if (flag) return *flag;
  if (config.bundle) return *config.bundle;
  if (const char* env = std::getenv("REGION_EDIT_BUNDLE"); env != nullptr && *env != '\0') {
    return env;
  }
  return "bundle";
}

struct ParamFlags {
  std::optional<int> steps;
  std::optional<double> cfg_scale;
  std::optional<double> grad_scale;
  std::optional<int> threshold;
  std::optional<double> lambda1;
  std::optional<double> lambda2;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> codec;
  bool no_blend = false;
  bool no_preservation_loss = false;
  bool no_trajectory = false;
  bool resize = false;
};

void add_param_flags(CLI::App* cmd, ParamFlags& f) {
  cmd->add_option("--steps", f.steps, "Reverse diffusion steps (default 100)");
  cmd->add_option("--cfg-scale", f.cfg_scale, "Classifier-free guidance scale (default 5)");
  cmd->add_option("--grad-scale", f.grad_scale, "Loss-gradient guidance scale (default 150)");
  cmd->add_option("--threshold", f.threshold, "Mask threshold K in 0..255 (default 150)");
  cmd->add_option("--lambda1", f.lambda1, "Perceptual preservation weight (default 0.5)");
  cmd->add_option("--lambda2", f.lambda2, "MSE preservation weight (default 0.5)");
  cmd->add_option("--seed", f.seed, "Sampling seed (default 0)");
  cmd->add_option("--codec", f.codec, "Codec the bundle must provide: toy or identity");
  cmd->add_flag("--no-blend", f.no_blend, "Disable latent blending");
  cmd->add_flag("--no-preservation-loss", f.no_preservation_loss, "Disable the preservation loss");
  cmd->add_flag("--no-trajectory", f.no_trajectory, "Do not record the per-step trace");
  cmd->add_flag("--resize", f.resize, "Resize inputs to the bundle geometry instead of rejecting");
}

EditParams apply_flags(EditParams p, const ParamFlags& f) {
  if (f.steps) p.steps = *f.steps;
  if (f.cfg_scale) p.guidance.cfg_scale = *f.cfg_scale;
  if (f.grad_scale) p.guidance.grad_scale = *f.grad_scale;
  if (f.threshold) p.threshold = *f.threshold;
  if (f.lambda1) p.guidance.lambda1 = *f.lambda1;
  if (f.lambda2) p.guidance.lambda2 = *f.lambda2;
  if (f.seed) p.seed = *f.seed;
  if (f.codec) p.codec = *f.codec;
  if (f.no_blend) p.blend = false;
  if (f.no_preservation_loss) p.preservation_loss = false;
  if (f.no_trajectory) p.record_trajectory = false;
  if (f.resize) p.resize = ResizePolicy::kResize;
  return p;
}

EditParams base_params(const FileConfig& config) {
  EditParams p;
  if (config.defaults) p = edit_params_from_json(*config.defaults, p);
  return p;
}

ModelBundle open_bundle(const std::string& path) { return toyzoo::load_bundle(path); }

// Request file: {"positioning_text", "target_text", "params"}; the format
// written by `edit` as params.json and stored by the service as request.json.
struct RequestFile {
  std::string positioning_text;
  std::string target_text;
  EditParams params;
};

std::string request_file_json(const RequestFile& r) {
  json j = {{"positioning_text", r.positioning_text},
            {"target_text", r.target_text},
            {"params", json::parse(edit_params_to_json(r.params))}};
  return j.dump(2) + "\n";
}

RequestFile read_request_file(const std::string& path, const EditParams& defaults) {
  json j;
  try {
    const std::vector<char> text = nn::read_file(path);
    j = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw InvalidArgument("request", std::string("malformed JSON: ") + e.what());
  } catch (const std::exception& e) {
    throw InvalidArgument("request", e.what());
  }
  RequestFile r;
  r.params = defaults;
  if (!j.is_object()) throw InvalidArgument("request", "expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "positioning_text" || key == "target_text") {
      if (!value.is_string()) throw InvalidArgument(key, "expected a string");
      (key == "positioning_text" ? r.positioning_text : r.target_text) = value.get<std::string>();
    } else if (key == "params") {
      r.params = edit_params_from_json(value.dump(), defaults);
    } else if (key != "idempotency_key") {
      throw InvalidArgument("request." + key, "unknown key");
    }
  }
  return r;
}

void write_text(const fs::path& path, const std::string& text) {
  nn::write_file_atomic(path, text);
}

std::string format_area(double area) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", area);
  return buf;
}

std::vector<fs::path> png_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InvalidArgument(dir.string(), "not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Blocks SIGINT/SIGTERM for the calling thread and every thread it starts
// afterwards; wait() hands them to a dedicated thread instead.
class SignalStopper {
 public:
  SignalStopper() {
    sigemptyset(&set_);
    sigaddset(&set_, SIGINT);
    sigaddset(&set_, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set_, &old_);
  }
  ~SignalStopper() {
    if (thread_.joinable()) {
      // Wake the waiter if the server stopped for another reason.
      pthread_kill(thread_.native_handle(), SIGTERM);
      thread_.join();
    }
    pthread_sigmask(SIG_SETMASK, &old_, nullptr);
  }

  void stop_on_signal(service::HttpServer& server) {
    thread_ = std::thread([this, &server] {
      int sig = 0;
      sigwait(&set_, &sig);
      server.stop();
    });
  }

 private:
  sigset_t set_{};
  sigset_t old_{};
  std::thread thread_;
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Text-guided region editing with toy diffusion models", "region_edit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::string> config_path;
  std::optional<std::string> bundle_flag;
  bool as_json = false;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--bundle", bundle_flag, "Model bundle directory (env REGION_EDIT_BUNDLE)");
  app.add_flag("--json", as_json, "Machine-readable output on stdout");

  // edit
  CLI::App* edit = app.add_subcommand("edit", "Edit the region selected by a positioning prompt");
  std::string edit_image;
  std::optional<std::string> pos_text;
  std::optional<std::string> target_text;
  std::optional<std::string> edit_out;
  std::optional<std::string> request_path;
  ParamFlags edit_flags;
  edit->add_option("--image", edit_image, "Input PNG")->required()->check(CLI::ExistingFile);
  edit->add_option("--pos-text", pos_text, "Prompt locating the region to edit");
  edit->add_option("--target-text", target_text, "Prompt describing the new content");
  edit->add_option("--out", edit_out, "Output directory (default out)");
  edit->add_option("--request", request_path, "Replay a params.json / request.json file")
      ->check(CLI::ExistingFile);
  add_param_flags(edit, edit_flags);

  // mask
  CLI::App* mask = app.add_subcommand("mask", "Preview the mask for a positioning prompt");
  std::string mask_image;
  std::string mask_text;
  std::optional<int> mask_threshold;
  std::optional<std::string> mask_out;
  bool sweep = false;
  bool mask_resize = false;
  mask->add_option("--image", mask_image, "Input PNG")->required()->check(CLI::ExistingFile);
  mask->add_option("--pos-text", mask_text, "Prompt locating the region")->required();
  mask->add_option("--threshold", mask_threshold, "Mask threshold K in 0..255 (default 150)");
  mask->add_option("--out", mask_out, "Output directory (default out)");
  mask->add_flag("--sweep", sweep, "Write masks for K in {0,50,...,250} and sweep.csv");
  mask->add_flag("--resize", mask_resize, "Resize inputs to the bundle geometry");

  // train
  CLI::App* train = app.add_subcommand("train", "Train toy model components into a bundle");
  std::string component = "all";
  std::uint64_t train_seed = 0;
  bool quick = false;
  bool quiet = false;
  bool identity_codec = false;
  train->add_option("component", component, "codec, embedder, evaluator, segmenter, denoiser or all")
      ->check(CLI::IsMember({"codec", "embedder", "evaluator", "segmenter", "denoiser", "all"}));
  train->add_option("--seed", train_seed, "Training seed");
  train->add_flag("--quick", quick, "Tiny settings for smoke tests");
  train->add_flag("--identity-codec", identity_codec, "Pixel-space bundle without a learned codec");
  train->add_flag("--quiet", quiet, "No progress output");

  // eval
  CLI::App* eval = app.add_subcommand("eval", "Compute metrics over a directory of edits");
  std::string edited_dir;
  std::string originals_dir;
  std::string masks_dir;
  std::string eval_prompt;
  std::optional<std::string> eval_out;
  std::optional<std::string> features;
  eval->add_option("--edited", edited_dir, "Edited PNGs")->required();
  eval->add_option("--originals", originals_dir, "Original PNGs with matching names")->required();
  eval->add_option("--masks", masks_dir, "Mask PNGs with matching names")->required();
  eval->add_option("--prompt", eval_prompt, "Target prompt")->required();
  eval->add_option("--out", eval_out, "Also write the report to this file");
  eval->add_option("--features", features,
                   "Feature extractor for sfid: \"bundle\" or external:<embedder dir>");

  // serve
  CLI::App* serve = app.add_subcommand("serve", "Run the HTTP job service");
  std::optional<int> port;
  std::optional<std::string> host;
  std::optional<std::string> data_dir;
  std::optional<int> workers;
  std::optional<std::size_t> queue_capacity;
  std::optional<std::size_t> max_image_bytes;
  std::optional<std::string> studio_dir;
  std::optional<std::string> cors_origin;
  serve->add_option("--port", port, "Port; 0 picks a free one (env REGION_EDIT_PORT)");
  serve->add_option("--host", host, "Bind address (default 127.0.0.1)");
  serve->add_option("--data-dir", data_dir, "Job store root (env REGION_EDIT_DATA_DIR)");
  serve->add_option("--workers", workers, "Concurrent edit workers (default 1)");
  serve->add_option("--queue-capacity", queue_capacity, "Queued jobs before 503 (default 64)");
  serve->add_option("--max-image-bytes", max_image_bytes, "Upload cap per image");
  serve->add_option("--studio-dir", studio_dir, "Static files served under /studio");
  serve->add_option("--cors-origin", cors_origin, "Allowed CORS origin (default *)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  auto emit = [&](const json& j, const std::string& text) {
    if (as_json) {
      out << j.dump(2) << "\n";
    } else {
      out << text;
    }
  };

  try {
    const FileConfig config = read_config(config_path);
    const std::string bundle_path = resolve_bundle(bundle_flag, config);

    if (*edit) {
      EditParams params = base_params(config);
      RequestFile request;
      if (request_path) {
        request = read_request_file(*request_path, params);
        params = request.params;
      }
      if (pos_text) request.positioning_text = *pos_text;
      if (target_text) request.target_text = *target_text;
      if (request.positioning_text.empty()) throw InvalidArgument("pos-text", "required");
      if (request.target_text.empty()) throw InvalidArgument("target-text", "required");
      request.params = apply_flags(params, edit_flags);
      validate_user_params(request.params, kMaxSteps);
      const Image input = read_png(edit_image);

      const ModelBundle models = open_bundle(bundle_path);
      check_codec(request.params, models);
      const EditResult result =
          run_edit(input, request.positioning_text, request.target_text, request.params, models);

      const fs::path dir = edit_out ? *edit_out : config.out_dir ? *config.out_dir : "out";
      fs::create_directories(dir);
      write_png(dir / "result.png", result.output);
      write_png(dir / "mask.png", result.mask);
      write_png(dir / "soft_mask.png", result.soft_mask);
      write_text(dir / "trace.jsonl", trace_to_jsonl(result.trace));
      write_text(dir / "params.json", request_file_json(request));

      const double area = area_fraction(result.mask);
      const std::string status = result.no_op ? "no-op-mask" : "done";
      emit({{"status", status},
            {"out_dir", dir.string()},
            {"area_fraction", area},
            {"steps", request.params.steps},
            {"duration_seconds", result.duration_seconds},
            {"files", {"result.png", "mask.png", "soft_mask.png", "trace.jsonl", "params.json"}}},
           status + ": wrote " + (dir / "result.png").string() + " (mask area " +
               format_area(area) + ")\n");
      if (result.no_op) {
        err << "warning: the mask selected nothing; the input was reproduced\n";
        return kExitNoOpMask;
      }
      return kExitOk;
    }

    if (*mask) {
      EditParams params = base_params(config);
      const int threshold = mask_threshold ? *mask_threshold : params.threshold;
      if (!sweep && (threshold < 0 || threshold > kMaxUserThreshold)) {
        throw InvalidArgument("threshold", "must lie in [0, 255]");
      }
      Image input = read_png(mask_image);
      const ModelBundle models = open_bundle(bundle_path);
      if (input.height() != models.image_shape.height || input.width() != models.image_shape.width) {
        if (!mask_resize) {
          throw InvalidArgument("image", "size does not match the bundle geometry " +
                                             models.image_shape.to_string() + " (pass --resize)");
        }
        input = resize_bilinear(input, models.image_shape.height, models.image_shape.width);
      }
      const SoftMask soft = segment(input, mask_text, *models.text_encoder, *models.segmenter);
      const fs::path dir = mask_out ? *mask_out : config.out_dir ? *config.out_dir : "out";
      fs::create_directories(dir);
      write_png(dir / "soft_mask.png", soft);
      if (sweep) {
        std::string csv = "threshold,area_fraction\n";
        json rows = json::array();
        for (int k : kSweepThresholds) {
          const RegionMask m = threshold_mask(soft, k);
          char name[32];
          std::snprintf(name, sizeof name, "mask_K%03d.png", k);
          write_png(dir / name, m);
          const double area = area_fraction(m);
          csv += std::to_string(k) + "," + format_area(area) + "\n";
          rows.push_back({{"threshold", k}, {"area_fraction", area}, {"file", name}});
        }
        write_text(dir / "sweep.csv", csv);
        emit({{"out_dir", dir.string()}, {"sweep", rows}}, csv);
      } else {
        const RegionMask m = threshold_mask(soft, threshold);
        write_png(dir / "mask.png", m);
        const double area = area_fraction(m);
        emit({{"out_dir", dir.string()}, {"threshold", threshold}, {"area_fraction", area}},
             "mask area " + format_area(area) + " at K=" + std::to_string(threshold) + "\n");
      }
      return kExitOk;
    }

    if (*train) {
      toyzoo::BundleTrainOptions options =
          quick ? toyzoo::quick_train_options() : toyzoo::BundleTrainOptions{};
      options.identity_codec = identity_codec;
      const toyzoo::TrainLog log = [&](const std::string& line) {
        if (!quiet) err << line << "\n";
      };
      std::vector<toyzoo::ComponentManifest> manifests;
      if (component == "all") {
        manifests = toyzoo::train_bundle(bundle_path, train_seed, options, log);
      } else {
        manifests.push_back(toyzoo::train_component(
            bundle_path, toyzoo::parse_component(component), train_seed, options, log));
      }
      json list = json::array();
      std::string text;
      for (const auto& m : manifests) {
        list.push_back({{"component", m.component},
                        {"name", m.name},
                        {"metric", {{"name", m.metric_name}, {"value", m.metric}}},
                        {"content_hash", m.content_hash},
                        {"seed", m.seed}});
        text += m.component + " " + m.metric_name + "=" + std::to_string(m.metric) + " " +
                m.content_hash + "\n";
      }
      emit({{"bundle", bundle_path}, {"components", list}}, text);
      return kExitOk;
    }

    if (*eval) {
      const ModelBundle models = open_bundle(bundle_path);
      std::vector<Image> edited;
      std::vector<Image> originals;
      std::vector<RegionMask> masks;
      std::vector<std::string> names;
      for (const fs::path& p : png_files(edited_dir)) {
        const std::string name = p.filename().string();
        const fs::path original = fs::path(originals_dir) / name;
        const fs::path mask_file = fs::path(masks_dir) / name;
        if (!fs::exists(original)) throw InvalidArgument("originals", "missing " + name);
        if (!fs::exists(mask_file)) throw InvalidArgument("masks", "missing " + name);
        edited.push_back(read_png(p));
        originals.push_back(read_png(original));
        masks.push_back(read_mask_png(mask_file));
        names.push_back(name);
      }
      if (edited.empty()) throw InvalidArgument("edited", "no PNG files in " + edited_dir);

      std::shared_ptr<const ImageEncoder> feature_encoder = models.eval_image_encoder;
      if (features && *features != "bundle") {
        const std::string prefix = "external:";
        if (features->rfind(prefix, 0) != 0) {
          throw InvalidArgument("features", "expected \"bundle\" or external:<path>");
        }
        feature_encoder = toyzoo::load_image_encoder(features->substr(prefix.size()));
      }
      const metrics::EncoderFeatures extractor(feature_encoder);
      metrics::EvaluationInputs inputs{edited, originals, masks, names, eval_prompt};
      metrics::Evaluators evaluators;
      evaluators.text_encoder = models.eval_text_encoder.get();
      evaluators.image_encoder = models.eval_image_encoder.get();
      evaluators.perceptual = models.perceptual.get();
      evaluators.features = &extractor;
      const std::string report = metric_report_to_json(metrics::evaluate(inputs, evaluators));
      if (eval_out) write_text(*eval_out, report + "\n");
      out << report << "\n";
      return kExitOk;
    }

    if (*serve) {
      service::ServiceConfig sc = service::ServiceConfig::with_environment({});
      if (config.port) sc.port = *config.port;
      if (config.data_dir) sc.data_dir = *config.data_dir;
      if (config.workers) sc.workers = *config.workers;
      sc.defaults = base_params(config);
      if (port) sc.port = *port;
      if (host) sc.host = *host;
      if (data_dir) sc.data_dir = *data_dir;
      if (workers) sc.workers = *workers;
      if (queue_capacity) sc.queue_capacity = *queue_capacity;
      if (max_image_bytes) sc.max_image_bytes = *max_image_bytes;
      if (studio_dir) sc.studio_dir = *studio_dir;
      if (cors_origin) sc.cors_origin = *cors_origin;
      if (sc.workers < 1) throw InvalidArgument("workers", "must be at least 1");

      SignalStopper signals;
      auto jobs = std::make_shared<service::JobService>(open_bundle(bundle_path), sc);
      service::HttpServer server(jobs);
      const int bound = server.bind();
      emit({{"host", sc.host}, {"port", bound}, {"data_dir", sc.data_dir.string()}},
           "listening on http://" + sc.host + ":" + std::to_string(bound) + "\n");
      out.flush();
      signals.stop_on_signal(server);
      server.listen();
      jobs->stop();
      return kExitOk;
    }
  } catch (const ModelLoadError& e) {
    err << "error: model load failed: " << e.what() << "\n";
    return kExitModelLoad;
  } catch (const GuidanceDivergence& e) {
    err << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace regionedit::cli
