#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "regionedit/metrics.hpp"
#include "regionedit/sampler.hpp"

namespace regionedit {

// Largest threshold accepted from users; 256 is a library-only override.
inline constexpr int kMaxUserThreshold = 255;

// Range checks applied at the CLI and HTTP boundaries on top of
// EditParams::validate(). Throws InvalidArgument naming the field.
void validate_user_params(const EditParams& params, int max_steps);

// "identity" for the pass-through codec, "toy" otherwise.
std::string codec_kind(const ModelBundle& models);
// The codec named in the parameters must be the one the bundle provides.
void check_codec(const EditParams& params, const ModelBundle& models);

// JSON object with the keys steps, cfg_scale, grad_scale, threshold,
// lambda1, lambda2, seed, codec, record_trajectory, blend,
// preservation_loss, resize.
std::string edit_params_to_json(const EditParams& params, int indent = -1);
// Starts from `defaults` and overrides every key present. Unknown keys and
// wrong types raise InvalidArgument naming the offending field. When
// `extra_keys` is given, those keys are tolerated (and skipped).
EditParams edit_params_from_json(std::string_view json, const EditParams& defaults,
                                 const std::vector<std::string>& extra_keys = {});

// One JSON object per line: {"t":..,"clip_loss":..,"nerp_loss":..,"latent_norm":..}
std::string trace_entry_to_json(const TraceEntry& entry);
std::string trace_to_jsonl(const std::vector<TraceEntry>& trace);

std::string metric_report_to_json(const metrics::MetricReport& report, int indent = 2);

}  // namespace regionedit
