#include "regionedit/params_json.hpp"

#include <algorithm>
#include <json.hpp>

#include "regionedit/codec.hpp"

namespace regionedit {

using nlohmann::json;

namespace {

double number(const json& j, const char* key) {
  if (!j.is_number()) throw InvalidArgument(key, "expected a number");
  return j.get<double>();
}

int integer(const json& j, const char* key) {
  if (!j.is_number_integer()) throw InvalidArgument(key, "expected an integer");
  const auto v = j.get<long long>();
  if (v < -2147483647LL || v > 2147483647LL) throw InvalidArgument(key, "out of range");
  return static_cast<int>(v);
}

bool boolean(const json& j, const char* key) {
  if (!j.is_boolean()) throw InvalidArgument(key, "expected true or false");
  return j.get<bool>();
}

json trace_json(const TraceEntry& e) {
  return {{"t", e.t}, {"clip_loss", e.clip_loss}, {"nerp_loss", e.nerp_loss},
          {"latent_norm", e.latent_norm}};
}

}  // namespace

void validate_user_params(const EditParams& params, int max_steps) {
  params.validate();
  if (params.threshold > kMaxUserThreshold) {
    throw InvalidArgument("threshold", "must lie in [0, 255]");
  }
  if (params.steps > max_steps) {
    throw InvalidArgument("steps", "must lie in [1, " + std::to_string(max_steps) + "]");
  }
}

std::string codec_kind(const ModelBundle& models) {
  return dynamic_cast<const IdentityCodec*>(models.codec.get()) != nullptr ? "identity" : "toy";
}

void check_codec(const EditParams& params, const ModelBundle& models) {
  const std::string kind = codec_kind(models);
  if (params.codec != kind) {
    throw InvalidArgument("codec", "the loaded bundle provides the \"" + kind + "\" codec");
  }
}

std::string edit_params_to_json(const EditParams& p, int indent) {
  json j = {
      {"steps", p.steps},
      {"cfg_scale", p.guidance.cfg_scale},
      {"grad_scale", p.guidance.grad_scale},
      {"threshold", p.threshold},
      {"lambda1", p.guidance.lambda1},
      {"lambda2", p.guidance.lambda2},
      {"seed", p.seed},
      {"codec", p.codec},
      {"record_trajectory", p.record_trajectory},
      {"blend", p.blend},
      {"preservation_loss", p.preservation_loss},
      {"resize", p.resize == ResizePolicy::kResize ? "resize" : "reject"},
  };
  return j.dump(indent);
}

EditParams edit_params_from_json(std::string_view text, const EditParams& defaults,
                                 const std::vector<std::string>& extra_keys) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidArgument("params", std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw InvalidArgument("params", "expected a JSON object");
  EditParams p = defaults;
  for (const auto& [key, value] : j.items()) {
    const char* k = key.c_str();
    if (key == "steps") {
      p.steps = integer(value, k);
    } else if (key == "cfg_scale") {
      p.guidance.cfg_scale = number(value, k);
    } else if (key == "grad_scale") {
      p.guidance.grad_scale = number(value, k);
    } else if (key == "threshold") {
      p.threshold = integer(value, k);
    } else if (key == "lambda1") {
      p.guidance.lambda1 = number(value, k);
    } else if (key == "lambda2") {
      p.guidance.lambda2 = number(value, k);
    } else if (key == "seed") {
      if (!value.is_number_unsigned() && !(value.is_number_integer() && value.get<long long>() >= 0)) {
        throw InvalidArgument(k, "expected a non-negative integer");
      }
      p.seed = value.get<std::uint64_t>();
    } else if (key == "codec") {
      if (!value.is_string()) throw InvalidArgument(k, "expected a string");
      p.codec = value.get<std::string>();
    } else if (key == "record_trajectory") {
      p.record_trajectory = boolean(value, k);
    } else if (key == "blend") {
      p.blend = boolean(value, k);
    } else if (key == "preservation_loss") {
      p.preservation_loss = boolean(value, k);
    } else if (key == "resize") {
      if (!value.is_string() || (value != "resize" && value != "reject")) {
        throw InvalidArgument(k, "expected \"resize\" or \"reject\"");
      }
      p.resize = value == "resize" ? ResizePolicy::kResize : ResizePolicy::kReject;
    } else if (std::find(extra_keys.begin(), extra_keys.end(), key) == extra_keys.end()) {
      throw InvalidArgument(key, "unknown parameter");
    }
  }
  return p;
}

std::string trace_entry_to_json(const TraceEntry& entry) { return trace_json(entry).dump(); }

std::string trace_to_jsonl(const std::vector<TraceEntry>& trace) {
  std::string out;
  for (const TraceEntry& e : trace) {
    out += trace_entry_to_json(e);
    out += '\n';
  }
  return out;
}

std::string metric_report_to_json(const metrics::MetricReport& r, int indent) {
  json per = json::array();
  for (const auto& m : r.per_image) {
    per.push_back({{"name", m.name},
                   {"clip_score", m.clip_score},
                   {"preservation_lpips", m.preservation_lpips},
                   {"ih_score", m.ih_score},
                   {"outside_mse", m.outside_mse}});
  }
  json j = {
      {"clip_score", r.clip_score},
      {"sfid", r.sfid},
      {"sfid_mode", r.sfid_diagonal ? "diagonal" : "full"},
      {"sfid_stabilized", r.sfid_stabilized},
      {"ih_score", r.ih_score},
      {"ih_identity_fallback", r.ih_identity_fallback},
      {"preservation_lpips", r.preservation_lpips},
      {"per_image", per},
      {"notes", r.notes},
  };
  return j.dump(indent);
}

}  // namespace regionedit
