#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "regionedit/guidance.hpp"
#include "regionedit/models.hpp"
#include "regionedit/schedule.hpp"

namespace regionedit {

struct EditParams {
  int steps = 100;
  GuidanceParams guidance{};
  int threshold = 150;  // 0..255; 256 forces an empty mask
  std::uint64_t seed = 0;
  std::string codec = "toy";
  bool record_trajectory = true;
  // Ablation switches. Disabling both reproduces the "without preservation"
  // configuration: no latent blending and no preservation loss.
  bool blend = true;
  bool preservation_loss = true;
  // Inputs whose size differs from the bundle geometry are resized or rejected.
  ResizePolicy resize = ResizePolicy::kReject;

  void validate() const;

  friend bool operator==(const EditParams&, const EditParams&) = default;
};

struct TraceEntry {
  int t = 0;
  double clip_loss = 0;
  double nerp_loss = 0;
  double latent_norm = 0;

  friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

struct EditResult {
  Image output;
  RegionMask mask;
  SoftMask soft_mask;
  LatentMask latent_mask;
  std::vector<TraceEntry> trace;
  bool no_op = false;  // the mask selected nothing
  double duration_seconds = 0;
  EditParams params;
};

// Per-step view handed to observers. Latents are the state after step t
// completes, i.e. at index t-1.
struct StepState {
  int t = 0;
  const Latent* guided = nullptr;       // z''_{t-1}: guided sample before blending
  const Latent* blended = nullptr;      // z_{t-1} carried into the next step
  const Latent* input_chain = nullptr;  // forward-noised input at t-1 (blend only)
  const TraceEntry* trace = nullptr;
};

using StepObserver = std::function<void(const StepState&)>;

// Guided, masked reverse diffusion:
//   mask   = threshold(segment(x0, t1), K), downsampled to the latent plane
//   z0     = E(x0); z_T ~ N(0, I)
//   for t = T..1:
//     eps    = cfg(eps(z_t | empty), eps(z_t | t2), s)
//     mu, sd = posterior(z_t, eps, t)
//     L      = L_clip(D(z0_hat), t2, m) + L_nerp(x0, D(z0_hat), m)
//     z''    = mu - grad_scale * sd^2 * dL/dz0_hat + sd * noise
//     z_{t-1} = z'' (.) m_latent + forward_noise(z0, t-1) (.) (1 - m_latent)
//   return D(z_0)
EditResult run_edit(const Image& x0, std::string_view positioning_text,
                    std::string_view target_text, const EditParams& params,
                    const ModelBundle& models, const StepObserver& observer = {});

// Same loop with an explicit pixel mask instead of segmentation.
EditResult run_edit_with_mask(const Image& x0, const RegionMask& mask,
                              std::string_view target_text, const EditParams& params,
                              const ModelBundle& models, const StepObserver& observer = {});

// Plain reverse diffusion from noise with optional classifier-free
// guidance; no mask, no loss guidance.
Image run_unguided(std::string_view prompt, const EditParams& params, const ModelBundle& models);

// Latents carried through the loop, exposed for reference runs in tests.
Latent sample_initial_latent(Shape3 shape, std::uint64_t seed);

}  // namespace regionedit
