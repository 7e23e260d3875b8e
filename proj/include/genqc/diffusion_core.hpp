#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "genqc/condition_encoder.hpp"
#include "genqc/denoiser_unet.hpp"
#include "genqc/gate_codec.hpp"
#include "genqc/nn.hpp"
#include "genqc/rng.hpp"
#include "genqc/tensor.hpp"

namespace genqc {

/// Forward-process tables, all of length T. beta[t] is the variance added
/// at step t, alpha[t] = 1 - beta[t], alpha_bar[t] the running product of
/// the alphas up to and including t.
struct NoiseSchedule {
    int T = 0;
    double s = 0.0;
    std::string kind;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;
};

/// Cosine schedule: alpha_bar follows cos^2(((u + s) / (1 + s)) * pi/2)
/// normalized to start at 1, evaluated at u = (t+1)/T, with each beta
/// clipped to at most 0.999. Throws std::invalid_argument for T < 1.
NoiseSchedule cosine_schedule(int T, double s = 0.008);

/// Knobs for guided sampling. t_start indexes the strided (coarse)
/// schedule and is only consulted by sample_inpaint.
struct GuidanceConfig {
    double guidance_scale = 7.5;
    double phi = 0.7;
    int steps = 20;
    std::optional<int> t_start;

    /// Throws std::invalid_argument unless guidance_scale >= 0,
    /// phi in [0,1], 1 <= steps <= T and t_start (if set) in [0, steps).
    void validate(const NoiseSchedule& sched) const;
};

/// One draw from the forward process. eps is the regression target; the
/// perturbation gamma * xi enters x_t only.
struct NoisySample {
    Tensor x_t;
    Tensor eps;
    int t = 0;
    double gamma = 0.0;
};

/// x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) (eps + gamma * xi) with
/// eps, xi ~ N(0, I) drawn in that order. Throws std::invalid_argument
/// when t is outside [0, T).
NoisySample forward_noise(const Tensor& x0, int t, Rng& rng, const NoiseSchedule& sched,
                          double gamma);

/// One record of a training batch. unitary is present for compile-task
/// records and absent otherwise.
struct TrainingExample {
    Tensor x0;
    std::string prompt;
    std::optional<CMatrix> unitary;
};

struct TrainingLossOptions {
    double gamma = 0.1;
    double cond_drop_prob = 0.1;
    bool train_mode = true;
};

struct LossResult {
    double loss = 0.0;
    std::vector<Tensor> grads;  // aligned with the store, zeros where unused
    std::vector<int> timesteps;
    int dropped = 0;
};

/// Denoising score-matching loss over a batch: per example draws a uniform
/// timestep, nulls the condition with probability cond_drop_prob, noises
/// x0 and regresses the denoiser output against the true eps; returns the
/// batch-mean MSE and gradients for every parameter on the store. Throws
/// std::runtime_error with diagnostics when the loss or any gradient is
/// non-finite.
LossResult training_loss(const std::vector<TrainingExample>& batch, nn::ParamStore& store,
                         const DenoiserUNet& denoiser, const ConditionEncoder& encoder,
                         const NoiseSchedule& sched, Rng& rng,
                         const TrainingLossOptions& opts = {});

/// Classifier-free guidance with std rescaling: combines a conditional and
/// an unconditional prediction into eps_cfg = eps_null + g (eps_cond -
/// eps_null), rescales by sigma(eps_cond) / sigma(eps_cfg) over all
/// elements (floor 1e-12) and blends the two with weight phi. g = 0
/// returns eps_null untouched.
Tensor combine_guidance(const Tensor& eps_cond, const Tensor& eps_null, double g, double phi);

/// combine_guidance applied to the denoiser's two branches at (x_t, t).
/// With g = 0 the conditional branch is never evaluated.
Tensor guided_epsilon(const Tensor& x_t, int t, const Tensor& cond, const Tensor& null_cond,
                      const nn::ParamStore& store, const DenoiserUNet& denoiser, double g,
                      double phi);

/// Ascending subsequence of [0, T) with uniform stride T / steps, starting
/// at 0; steps = T yields the identity. Throws std::invalid_argument
/// unless 1 <= steps <= T.
std::vector<int> strided_timesteps(int T, int steps);

/// One ancestral update on the coarse chain: moves x from timesteps[i] to
/// timesteps[i-1] (to clean data for i = 0) given the noise prediction
/// eps_hat, adding posterior noise sqrt(beta_tilde) * z except at i = 0,
/// where z is ignored and may be empty.
Tensor ddpm_step(const Tensor& x, const Tensor& eps_hat, const NoiseSchedule& sched,
                 const std::vector<int>& timesteps, int i, const Tensor& z);

/// Ancestral sampling from pure noise: x ~ N(0, I) of the given (qubits,
/// T, channels) shape, denoised over cfg.steps strided timesteps with
/// guided_epsilon at every step and a noise-free final update.
Tensor sample(const std::vector<int64_t>& shape, const Tensor& cond, const Tensor& null_cond,
              const nn::ParamStore& store, const DenoiserUNet& denoiser,
              const NoiseSchedule& sched, const GuidanceConfig& cfg, Rng& rng);

/// count independent draws from sample(), one child RNG stream per sample
/// so results do not depend on evaluation order.
std::vector<Tensor> sample_batch(int count, const std::vector<int64_t>& shape, const Tensor& cond,
                                 const Tensor& null_cond, const nn::ParamStore& store,
                                 const DenoiserUNet& denoiser, const NoiseSchedule& sched,
                                 const GuidanceConfig& cfg, uint64_t seed);

/// Inpainting sampler for the mask and edit tasks. fixed_mask is (qubits,
/// T) with nonzero entries marking cells pinned to tmpl across every
/// channel. x starts as tmpl forward-noised to strided index cfg.t_start;
/// before each prediction the fixed cells are overwritten with tmpl noised
/// to the current timestep, and at the end with tmpl itself. Throws
/// std::invalid_argument on mask/template shape mismatch or missing
/// t_start.
Tensor sample_inpaint(const Tensor& tmpl, const Tensor& fixed_mask, const Tensor& cond,
                      const Tensor& null_cond, const nn::ParamStore& store,
                      const DenoiserUNet& denoiser, const NoiseSchedule& sched,
                      const GuidanceConfig& cfg, Rng& rng);

/// Token-level convenience: encodes tmpl with the vocabulary and inpaints.
Tensor sample_inpaint(const TokenMatrix& tmpl, const GateVocabulary& v, const Tensor& fixed_mask,
                      const Tensor& cond, const Tensor& null_cond, const nn::ParamStore& store,
                      const DenoiserUNet& denoiser, const NoiseSchedule& sched,
                      const GuidanceConfig& cfg, Rng& rng);

}  // namespace genqc
