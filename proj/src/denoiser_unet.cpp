#include "genqc/denoiser_unet.hpp"

#include <stdexcept>
#include <string>

namespace genqc {

namespace {

void validate_config(const DenoiserConfig& cfg) {
    if (cfg.in_channels < 1) throw std::invalid_argument("denoiser: in_channels must be positive");
    if (cfg.widths.empty()) throw std::invalid_argument("denoiser: needs at least one level");
    if (cfg.f < 1 || cfg.f % 2 == 0)
        throw std::invalid_argument("denoiser: filter size must be odd");
    if (cfg.widths[0] % 2 != 0)
        throw std::invalid_argument("denoiser: top width must be even for the 2-d encoding");
    for (int64_t w : cfg.widths) {
        if (w % cfg.groups != 0)
            throw std::invalid_argument("denoiser: widths must divide by groups");
        if (w % cfg.heads != 0)
            throw std::invalid_argument("denoiser: widths must divide by heads");
        if ((2 * w) % cfg.groups != 0)
            throw std::invalid_argument("denoiser: skip concat widths must divide by groups");
    }
    if (cfg.cond_dim < 1) throw std::invalid_argument("denoiser: cond_dim must be positive");
}

}  // namespace

DenoiserUNet::DenoiserUNet(nn::ParamStore& store, const DenoiserConfig& cfg, Rng& rng)
    : cfg_(cfg) {
    validate_config(cfg_);
    if (cfg_.time_dim == 0) cfg_.time_dim = 4 * cfg_.widths[0];
    int pad = (cfg_.f - 1) / 2;
    int64_t w0 = cfg_.widths[0];

    conv_in_ = nn::ConvTime(store, "unet.conv_in", cfg_.in_channels, w0, cfg_.f, 1, pad, rng);
    time_embed_ = nn::TimeEmbed(store, "unet.time", w0, cfg_.time_dim, rng);

    int64_t prev = w0;
    for (int i = 0; i < levels(); ++i) {
        int64_t w = cfg_.widths[static_cast<size_t>(i)];
        std::string base = "unet.enc" + std::to_string(i);
        EncLevel lvl;
        lvl.res = nn::ResBlock(store, base + ".res", prev, w, cfg_.time_dim, cfg_.f, cfg_.groups,
                               rng);
        lvl.attn = nn::TransformerBlock(store, base + ".attn", w, cfg_.cond_dim, cfg_.heads,
                                        cfg_.groups, rng);
        lvl.down = nn::ConvTime(store, base + ".down", w, w, 2, 2, 0, rng);
        enc_.push_back(lvl);
        prev = w;
    }

    int64_t wb = cfg_.widths.back();
    mid_res1_ = nn::ResBlock(store, "unet.mid.res1", wb, wb, cfg_.time_dim, cfg_.f, cfg_.groups,
                             rng);
    mid_attn_ = nn::TransformerBlock(store, "unet.mid.attn", wb, cfg_.cond_dim, cfg_.heads,
                                     cfg_.groups, rng);
    mid_res2_ = nn::ResBlock(store, "unet.mid.res2", wb, wb, cfg_.time_dim, cfg_.f, cfg_.groups,
                             rng);

    prev = wb;
    for (int i = levels() - 1; i >= 0; --i) {
        int64_t w = cfg_.widths[static_cast<size_t>(i)];
        std::string base = "unet.dec" + std::to_string(i);
        DecLevel lvl;
        lvl.up_conv = nn::ConvTime(store, base + ".up", prev, w, cfg_.f, 1, pad, rng);
        lvl.res = nn::ResBlock(store, base + ".res", 2 * w, w, cfg_.time_dim, cfg_.f, cfg_.groups,
                               rng);
        lvl.attn = nn::TransformerBlock(store, base + ".attn", w, cfg_.cond_dim, cfg_.heads,
                                        cfg_.groups, rng);
        dec_.push_back(lvl);
        prev = w;
    }

    norm_out_ = nn::GroupNormLayer(store, "unet.norm_out", w0, cfg_.groups);
    conv_out_ = nn::ConvTime(store, "unet.conv_out", w0, cfg_.in_channels, cfg_.f, 1, pad, rng,
                             /*zero_init=*/true);
}

ad::Val DenoiserUNet::forward(ad::Tape& t, const nn::Bound& p, ad::Val x, double timestep,
                              ad::Val cond) const {
    const Tensor& xv = t.val(x);
    if (xv.rank() != 3) throw std::invalid_argument("denoiser: rank-3 input expected");
    if (xv.dim(2) != cfg_.in_channels)
        throw std::invalid_argument("denoiser: channel count mismatch");
    int64_t q = xv.dim(0);
    int64_t T = xv.dim(1);
    if (T <= 0 || T % time_multiple() != 0)
        throw std::invalid_argument("denoiser: time length must be a positive multiple of " +
                                    std::to_string(time_multiple()));
    if (t.val(cond).rank() != 2 || t.val(cond).last_dim() != cfg_.cond_dim)
        throw std::invalid_argument("denoiser: condition width mismatch");
    if (timestep < 0.0) throw std::invalid_argument("denoiser: negative timestep");

    ad::Val temb = time_embed_.forward(t, p, timestep);
    ad::Val h = conv_in_.forward(t, p, x);
    if (cfg_.use_positional_encoding)
        h = ad::add_const(t, h, nn::positional_encoding_2d(q, T, cfg_.widths[0]));

    std::vector<ad::Val> skips;
    for (const EncLevel& lvl : enc_) {
        h = lvl.res.forward(t, p, h, temb);
        h = lvl.attn.forward(t, p, h, cond);
        skips.push_back(h);
        h = lvl.down.forward(t, p, h);
    }

    h = mid_res1_.forward(t, p, h, temb);
    h = mid_attn_.forward(t, p, h, cond);
    h = mid_res2_.forward(t, p, h, temb);

    for (size_t d = 0; d < dec_.size(); ++d) {
        const DecLevel& lvl = dec_[d];
        h = ad::upsample_time2(t, h);
        h = lvl.up_conv.forward(t, p, h);
        ad::Val skip = ad::scale(t, skips[skips.size() - 1 - d], cfg_.skip_scale);
        const Tensor& hv = t.val(h);
        int64_t hq = hv.dim(0), ht = hv.dim(1), hc = hv.dim(2);
        int64_t sc = t.val(skip).dim(2);
        ad::Val cat = ad::concat_cols(t, {h, skip});
        h = ad::reshape(t, cat, {hq, ht, hc + sc});
        h = lvl.res.forward(t, p, h, temb);
        h = lvl.attn.forward(t, p, h, cond);
    }

    h = ad::silu(t, norm_out_.forward(t, p, h));
    return conv_out_.forward(t, p, h);
}

Tensor DenoiserUNet::predict(const nn::ParamStore& store, const Tensor& x, double timestep,
                             const Tensor& cond) const {
    ad::Tape tape;
    nn::Bound p = nn::bind(tape, store, false);
    ad::Val out = forward(tape, p, tape.leaf(x), timestep, tape.leaf(cond));
    return tape.val(out).clone();
}

}  // namespace genqc
