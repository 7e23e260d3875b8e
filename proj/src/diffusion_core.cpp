#include "genqc/diffusion_core.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace genqc {

namespace {

double cosine_alpha_bar(double u, double s) {
    const double c = std::cos(((u + s) / (1.0 + s)) * M_PI / 2.0);
    return c * c;
}

void check_timestep(int t, const NoiseSchedule& sched, const char* where) {
    if (t < 0 || t >= sched.T) {
        std::ostringstream os;
        os << where << ": timestep " << t << " outside [0, " << sched.T << ")";
        throw std::invalid_argument(os.str());
    }
}

double population_std(const Tensor& x) {
    const int64_t n = x.numel();
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += x[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = x[i] - mean;
        var += d * d;
    }
    return std::sqrt(var / static_cast<double>(n));
}

void check_condition_tensor(const Tensor& c, int64_t cond_dim, const char* label) {
    if (c.rank() != 2 || c.dim(1) != cond_dim) {
        std::ostringstream os;
        os << label << " must be rank-2 with width " << cond_dim;
        throw std::invalid_argument(os.str());
    }
}

/// Copies every channel of the cells flagged by mask from src into dst.
void overwrite_fixed(Tensor& dst, const Tensor& src, const Tensor& mask) {
    const int64_t q = dst.dim(0), tt = dst.dim(1), d = dst.dim(2);
    for (int64_t i = 0; i < q; ++i)
        for (int64_t j = 0; j < tt; ++j) {
            if (mask.at(i, j) == 0.0) continue;
            for (int64_t k = 0; k < d; ++k) dst.at(i, j, k) = src.at(i, j, k);
        }
}

}  // namespace

NoiseSchedule cosine_schedule(int T, double s) {
    if (T < 1) throw std::invalid_argument("cosine_schedule: T must be >= 1");
    if (s < 0.0) throw std::invalid_argument("cosine_schedule: offset s must be >= 0");
    NoiseSchedule sched;
    sched.T = T;
    sched.s = s;
    sched.kind = "cosine";
    sched.beta.resize(static_cast<size_t>(T));
    sched.alpha.resize(static_cast<size_t>(T));
    sched.alpha_bar.resize(static_cast<size_t>(T));
    const double f0 = cosine_alpha_bar(0.0, s);
    double running = 1.0;
    double prev = 1.0;
    for (int t = 0; t < T; ++t) {
        const double target = cosine_alpha_bar((t + 1) / static_cast<double>(T), s) / f0;
        double beta = 1.0 - target / prev;
        if (beta > 0.999) beta = 0.999;
        prev = target;
        sched.beta[static_cast<size_t>(t)] = beta;
        sched.alpha[static_cast<size_t>(t)] = 1.0 - beta;
        running *= 1.0 - beta;
        sched.alpha_bar[static_cast<size_t>(t)] = running;
    }
    return sched;
}

void GuidanceConfig::validate(const NoiseSchedule& sched) const {
    if (guidance_scale < 0.0) throw std::invalid_argument("guidance_scale must be >= 0");
    if (phi < 0.0 || phi > 1.0) throw std::invalid_argument("phi must be in [0, 1]");
    if (steps < 1 || steps > sched.T)
        throw std::invalid_argument("steps must be in [1, schedule T]");
    if (t_start && (*t_start < 0 || *t_start >= steps))
        throw std::invalid_argument("t_start must be in [0, steps)");
}

NoisySample forward_noise(const Tensor& x0, int t, Rng& rng, const NoiseSchedule& sched,
                          double gamma) {
    check_timestep(t, sched, "forward_noise");
    if (gamma < 0.0) throw std::invalid_argument("forward_noise: gamma must be >= 0");
    const double abar = sched.alpha_bar[static_cast<size_t>(t)];
    const double signal = std::sqrt(abar);
    const double noise = std::sqrt(1.0 - abar);
    NoisySample out;
    out.t = t;
    out.gamma = gamma;
    out.eps = Tensor::randn(x0.shape(), rng);
    Tensor xi;
    if (gamma > 0.0) xi = Tensor::randn(x0.shape(), rng);
    out.x_t = Tensor(x0.shape());
    for (int64_t i = 0; i < x0.numel(); ++i) {
        const double pert = gamma > 0.0 ? gamma * xi[i] : 0.0;
        out.x_t[i] = signal * x0[i] + noise * (out.eps[i] + pert);
    }
    return out;
}

LossResult training_loss(const std::vector<TrainingExample>& batch, nn::ParamStore& store,
                         const DenoiserUNet& denoiser, const ConditionEncoder& encoder,
                         const NoiseSchedule& sched, Rng& rng, const TrainingLossOptions& opts) {
    if (batch.empty()) throw std::invalid_argument("training_loss: empty batch");
    if (opts.gamma < 0.0) throw std::invalid_argument("training_loss: gamma must be >= 0");
    if (opts.cond_drop_prob < 0.0 || opts.cond_drop_prob > 1.0)
        throw std::invalid_argument("training_loss: cond_drop_prob must be in [0, 1]");
    if (encoder.config().c_cond != denoiser.config().cond_dim)
        throw std::invalid_argument("training_loss: encoder c_cond != denoiser cond_dim");

    ad::Tape tape;
    const nn::Bound bound = nn::bind(tape, store, true);
    LossResult out;
    std::vector<double> per_sample;
    per_sample.reserve(batch.size());
    ad::Val total = -1;
    for (size_t k = 0; k < batch.size(); ++k) {
        const TrainingExample& ex = batch[k];
        const int t = static_cast<int>(rng.integer(static_cast<uint64_t>(sched.T)));
        const bool drop = rng.bernoulli(opts.cond_drop_prob);
        const NoisySample ns = forward_noise(ex.x0, t, rng, sched, opts.gamma);

        ad::Val cond;
        if (drop) {
            cond = encoder.null_condition(tape, bound);
        } else {
            const ad::Val prompt_emb = encoder.embed_prompt(tape, bound, ex.prompt);
            std::optional<ad::Val> unitary_emb;
            if (ex.unitary)
                unitary_emb =
                    encoder.encode_unitary(tape, bound, *ex.unitary, opts.train_mode, &rng);
            cond = encoder.assemble_condition(tape, bound, prompt_emb, unitary_emb, false);
        }

        const ad::Val x_t = tape.leaf(ns.x_t);
        const ad::Val pred = denoiser.forward(tape, bound, x_t, static_cast<double>(t), cond);
        const ad::Val l = ad::mse_loss(tape, pred, ns.eps);
        per_sample.push_back(tape.val(l)[0]);
        total = k == 0 ? l : ad::add(tape, total, l);
        out.timesteps.push_back(t);
        out.dropped += drop ? 1 : 0;
    }
    const ad::Val avg = ad::scale(tape, total, 1.0 / static_cast<double>(batch.size()));
    out.loss = tape.val(avg)[0];
    if (!std::isfinite(out.loss)) {
        std::ostringstream os;
        os << "training_loss: non-finite loss " << out.loss << " over " << batch.size()
           << " examples; per-sample (t, loss):";
        for (size_t k = 0; k < per_sample.size(); ++k)
            os << " (" << out.timesteps[k] << ", " << per_sample[k] << ")";
        throw std::runtime_error(os.str());
    }
    tape.backward(avg);
    out.grads = nn::collect_grads(tape, bound, store);
    for (int i = 0; i < store.size(); ++i) {
        const Tensor& g = out.grads[static_cast<size_t>(i)];
        for (int64_t j = 0; j < g.numel(); ++j) {
            if (std::isfinite(g[j])) continue;
            std::ostringstream os;
            os << "training_loss: non-finite gradient in parameter " << store.name(i)
               << " at element " << j;
            throw std::runtime_error(os.str());
        }
    }
    return out;
}

Tensor combine_guidance(const Tensor& eps_cond, const Tensor& eps_null, double g, double phi) {
    if (g < 0.0) throw std::invalid_argument("combine_guidance: g must be >= 0");
    if (phi < 0.0 || phi > 1.0) throw std::invalid_argument("combine_guidance: phi must be in [0, 1]");
    if (g == 0.0) return eps_null.clone();
    if (!same_shape(eps_cond, eps_null))
        throw std::invalid_argument("combine_guidance: branch shape mismatch");
    Tensor cfg(eps_cond.shape());
    for (int64_t i = 0; i < cfg.numel(); ++i)
        cfg[i] = eps_null[i] + g * (eps_cond[i] - eps_null[i]);
    if (phi == 0.0) return cfg;
    const double sigma_cond = population_std(eps_cond);
    const double sigma_cfg = std::max(population_std(cfg), 1e-12);
    const double blend = phi * (sigma_cond / sigma_cfg) + (1.0 - phi);
    Tensor out(cfg.shape());
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = blend * cfg[i];
    return out;
}

Tensor guided_epsilon(const Tensor& x_t, int t, const Tensor& cond, const Tensor& null_cond,
                      const nn::ParamStore& store, const DenoiserUNet& denoiser, double g,
                      double phi) {
    const Tensor eps_null = denoiser.predict(store, x_t, static_cast<double>(t), null_cond);
    if (g == 0.0) return combine_guidance(eps_null, eps_null, g, phi);
    const Tensor eps_cond = denoiser.predict(store, x_t, static_cast<double>(t), cond);
    return combine_guidance(eps_cond, eps_null, g, phi);
}

std::vector<int> strided_timesteps(int T, int steps) {
    if (steps < 1 || steps > T)
        throw std::invalid_argument("strided_timesteps: steps must be in [1, T]");
    std::vector<int> ts(static_cast<size_t>(steps));
    for (int i = 0; i < steps; ++i)
        ts[static_cast<size_t>(i)] =
            static_cast<int>((static_cast<int64_t>(i) * T) / steps);
    return ts;
}

Tensor ddpm_step(const Tensor& x, const Tensor& eps_hat, const NoiseSchedule& sched,
                 const std::vector<int>& timesteps, int i, const Tensor& z) {
    if (i < 0 || i >= static_cast<int>(timesteps.size()))
        throw std::invalid_argument("ddpm_step: step index out of range");
    if (!same_shape(x, eps_hat)) throw std::invalid_argument("ddpm_step: eps shape mismatch");
    const int t = timesteps[static_cast<size_t>(i)];
    check_timestep(t, sched, "ddpm_step");
    const double abar_t = sched.alpha_bar[static_cast<size_t>(t)];
    const double abar_prev =
        i > 0 ? sched.alpha_bar[static_cast<size_t>(timesteps[static_cast<size_t>(i - 1)])] : 1.0;
    const double alpha = abar_t / abar_prev;
    const double beta = 1.0 - alpha;
    const double eps_coef = beta / std::sqrt(1.0 - abar_t);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
    Tensor out(x.shape());
    for (int64_t j = 0; j < out.numel(); ++j)
        out[j] = inv_sqrt_alpha * (x[j] - eps_coef * eps_hat[j]);
    if (i > 0) {
        if (!same_shape(x, z)) throw std::invalid_argument("ddpm_step: z shape mismatch");
        const double beta_tilde = beta * (1.0 - abar_prev) / (1.0 - abar_t);
        const double sigma = std::sqrt(beta_tilde);
        for (int64_t j = 0; j < out.numel(); ++j) out[j] += sigma * z[j];
    }
    return out;
}

Tensor sample(const std::vector<int64_t>& shape, const Tensor& cond, const Tensor& null_cond,
              const nn::ParamStore& store, const DenoiserUNet& denoiser,
              const NoiseSchedule& sched, const GuidanceConfig& cfg, Rng& rng) {
    cfg.validate(sched);
    if (shape.size() != 3) throw std::invalid_argument("sample: shape must be (qubits, T, channels)");
    if (shape[1] <= 0 || shape[1] % denoiser.time_multiple() != 0)
        throw std::invalid_argument("sample: time dimension must be a positive multiple of the denoiser stride");
    if (shape[2] != denoiser.config().in_channels)
        throw std::invalid_argument("sample: channel count does not match the denoiser");
    check_condition_tensor(null_cond, denoiser.config().cond_dim, "sample: null condition");
    if (cfg.guidance_scale > 0.0)
        check_condition_tensor(cond, denoiser.config().cond_dim, "sample: condition");

    const std::vector<int> ts = strided_timesteps(sched.T, cfg.steps);
    Tensor x = Tensor::randn(shape, rng);
    for (int i = cfg.steps - 1; i >= 0; --i) {
        const Tensor eps = guided_epsilon(x, ts[static_cast<size_t>(i)], cond, null_cond, store,
                                          denoiser, cfg.guidance_scale, cfg.phi);
        const Tensor z = i > 0 ? Tensor::randn(shape, rng) : Tensor();
        x = ddpm_step(x, eps, sched, ts, i, z);
    }
    return x;
}

std::vector<Tensor> sample_batch(int count, const std::vector<int64_t>& shape, const Tensor& cond,
                                 const Tensor& null_cond, const nn::ParamStore& store,
                                 const DenoiserUNet& denoiser, const NoiseSchedule& sched,
                                 const GuidanceConfig& cfg, uint64_t seed) {
    if (count < 0) throw std::invalid_argument("sample_batch: count must be >= 0");
    std::vector<Tensor> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        Rng rng = Rng::child(seed, static_cast<uint64_t>(i));
        out.push_back(sample(shape, cond, null_cond, store, denoiser, sched, cfg, rng));
    }
    return out;
}

Tensor sample_inpaint(const Tensor& tmpl, const Tensor& fixed_mask, const Tensor& cond,
                      const Tensor& null_cond, const nn::ParamStore& store,
                      const DenoiserUNet& denoiser, const NoiseSchedule& sched,
                      const GuidanceConfig& cfg, Rng& rng) {
    if (tmpl.rank() != 3)
        throw std::invalid_argument("sample_inpaint: template must be (qubits, T, channels)");
    if (fixed_mask.rank() != 2 || fixed_mask.dim(0) != tmpl.dim(0) ||
        fixed_mask.dim(1) != tmpl.dim(1))
        throw std::invalid_argument("sample_inpaint: mask shape does not match the template grid");
    cfg.validate(sched);
    if (!cfg.t_start) throw std::invalid_argument("sample_inpaint: t_start is required");
    if (tmpl.dim(1) % denoiser.time_multiple() != 0)
        throw std::invalid_argument("sample_inpaint: time dimension must be a multiple of the denoiser stride");
    if (tmpl.dim(2) != denoiser.config().in_channels)
        throw std::invalid_argument("sample_inpaint: channel count does not match the denoiser");
    check_condition_tensor(null_cond, denoiser.config().cond_dim, "sample_inpaint: null condition");
    if (cfg.guidance_scale > 0.0)
        check_condition_tensor(cond, denoiser.config().cond_dim, "sample_inpaint: condition");

    const std::vector<int> ts = strided_timesteps(sched.T, cfg.steps);
    const int start = *cfg.t_start;
    Tensor x = forward_noise(tmpl, ts[static_cast<size_t>(start)], rng, sched, 0.0).x_t;
    for (int i = start; i >= 0; --i) {
        const Tensor noised =
            forward_noise(tmpl, ts[static_cast<size_t>(i)], rng, sched, 0.0).x_t;
        overwrite_fixed(x, noised, fixed_mask);
        const Tensor eps = guided_epsilon(x, ts[static_cast<size_t>(i)], cond, null_cond, store,
                                          denoiser, cfg.guidance_scale, cfg.phi);
        const Tensor z = i > 0 ? Tensor::randn(tmpl.shape(), rng) : Tensor();
        x = ddpm_step(x, eps, sched, ts, i, z);
    }
    overwrite_fixed(x, tmpl, fixed_mask);
    return x;
}

Tensor sample_inpaint(const TokenMatrix& tmpl, const GateVocabulary& v, const Tensor& fixed_mask,
                      const Tensor& cond, const Tensor& null_cond, const nn::ParamStore& store,
                      const DenoiserUNet& denoiser, const NoiseSchedule& sched,
                      const GuidanceConfig& cfg, Rng& rng) {
    return sample_inpaint(encode(tmpl, v), fixed_mask, cond, null_cond, store, denoiser, sched,
                          cfg, rng);
}

}  // namespace genqc
