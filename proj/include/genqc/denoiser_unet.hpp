#pragma once

#include <vector>

#include "genqc/nn.hpp"
#include "genqc/rng.hpp"

namespace genqc {

/// Shape of the noise-prediction network. Defaults are the desk-scale
/// layout; tests shrink everything. widths lists the channel count per
/// resolution level, top to bottom; the time axis halves once per level,
/// so inputs need a length divisible by 2^levels.
struct DenoiserConfig {
    int64_t in_channels = 0;
    std::vector<int64_t> widths = {64, 128};
    int f = 3;
    int heads = 4;
    int groups = 8;
    int64_t cond_dim = 64;
    int64_t time_dim = 0;  // 0: 4 * widths[0]
    bool use_positional_encoding = true;
    double skip_scale = 0.7071067811865475244;  // 1/sqrt(2)
};

/// Conditional noise predictor over circuit tensors. Convolutions run along
/// the time axis only, attention flattens the full qubit-by-time grid, and
/// the conditioning sequence enters through cross-attention; the network
/// therefore accepts any qubit count without reconfiguration.
class DenoiserUNet {
  public:
    DenoiserUNet(nn::ParamStore& store, const DenoiserConfig& cfg, Rng& rng);

    const DenoiserConfig& config() const { return cfg_; }
    int levels() const { return static_cast<int>(cfg_.widths.size()); }
    int64_t time_multiple() const { return int64_t{1} << levels(); }

    /// Noise prediction for x (qubits, T, in_channels) at diffusion step
    /// timestep, conditioned on cond (L, cond_dim). Output shape equals the
    /// input shape. T must be a positive multiple of time_multiple().
    ad::Val forward(ad::Tape& t, const nn::Bound& p, ad::Val x, double timestep,
                    ad::Val cond) const;

    /// Convenience no-grad forward on plain tensors.
    Tensor predict(const nn::ParamStore& store, const Tensor& x, double timestep,
                   const Tensor& cond) const;

  private:
    struct EncLevel {
        nn::ResBlock res;
        nn::TransformerBlock attn;
        nn::ConvTime down;
    };
    struct DecLevel {
        nn::ConvTime up_conv;
        nn::ResBlock res;
        nn::TransformerBlock attn;
    };

    DenoiserConfig cfg_;
    nn::ConvTime conv_in_;
    nn::TimeEmbed time_embed_;
    std::vector<EncLevel> enc_;
    nn::ResBlock mid_res1_;
    nn::TransformerBlock mid_attn_;
    nn::ResBlock mid_res2_;
    std::vector<DecLevel> dec_;  // deepest level first
    nn::GroupNormLayer norm_out_;
    nn::ConvTime conv_out_;
};

}  // namespace genqc
