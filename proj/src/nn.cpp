#include "genqc/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace genqc::nn {

int ParamStore::add(std::string name, Tensor value) {
    if (by_name_.count(name) > 0) throw std::invalid_argument("duplicate parameter: " + name);
    int idx = static_cast<int>(entries_.size());
    by_name_.emplace(name, idx);
    entries_.push_back({std::move(name), std::move(value)});
    return idx;
}

int ParamStore::index_of(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
}

int64_t ParamStore::total_elements() const {
    int64_t n = 0;
    for (const Entry& e : entries_) n += e.value.numel();
    return n;
}

Bound bind(ad::Tape& tape, const ParamStore& store, bool requires_grad) {
    Bound b;
    b.vals.reserve(static_cast<size_t>(store.size()));
    for (const ParamStore::Entry& e : store.entries())
        b.vals.push_back(tape.leaf(e.value, requires_grad));
    return b;
}

std::vector<Tensor> collect_grads(ad::Tape& tape, const Bound& bound, const ParamStore& store) {
    std::vector<Tensor> grads;
    grads.reserve(static_cast<size_t>(store.size()));
    for (int i = 0; i < store.size(); ++i) {
        ad::Val v = bound[i];
        if (tape.has_grad(v))
            grads.push_back(tape.grad(v));
        else
            grads.push_back(Tensor::zeros(store.value(i).shape()));
    }
    return grads;
}

Tensor xavier_uniform(std::vector<int64_t> shape, int64_t fan_in, int64_t fan_out, Rng& rng) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(std::move(shape));
    for (double& x : t.data()) x = (2.0 * rng.uniform() - 1.0) * limit;
    return t;
}

// ---------------------------------------------------------------------------
// Positional encodings
// ---------------------------------------------------------------------------

namespace {

/// Writes the interleaved sin/cos features of one position into dst[0..dim).
void sinusoid_row(double pos, int64_t dim, double* dst) {
    for (int64_t j = 0; j < dim; ++j) {
        int64_t i = j / 2;
        double angle = pos * std::exp(-std::log(10000.0) * static_cast<double>(2 * i) /
                                      static_cast<double>(dim));
        dst[j] = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
}

}  // namespace

Tensor positional_encoding_1d(int64_t len, int64_t dim) {
    Tensor pe({len, dim});
    for (int64_t pos = 0; pos < len; ++pos)
        sinusoid_row(static_cast<double>(pos), dim, pe.ptr() + pos * dim);
    return pe;
}

Tensor positional_encoding_2d(int64_t qubits, int64_t timesteps, int64_t dim) {
    if (dim % 2 != 0) throw std::invalid_argument("positional_encoding_2d: dim must be even");
    int64_t half = dim / 2;
    Tensor pe({qubits * timesteps, dim});
    for (int64_t qi = 0; qi < qubits; ++qi)
        for (int64_t ti = 0; ti < timesteps; ++ti) {
            double* row = pe.ptr() + (qi * timesteps + ti) * dim;
            sinusoid_row(static_cast<double>(qi), half, row);
            sinusoid_row(static_cast<double>(ti), half, row + half);
        }
    return pe;
}

Tensor timestep_features(double t, int64_t dim) {
    Tensor f({1, dim});
    sinusoid_row(t, dim, f.ptr());
    return f;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

Linear::Linear(ParamStore& store, const std::string& name, int64_t in, int64_t out, Rng& rng,
               bool zero_init)
    : in_dim(in), out_dim(out) {
    Tensor weight = zero_init ? Tensor::zeros({in, out}) : xavier_uniform({in, out}, in, out, rng);
    w = store.add(name + ".w", std::move(weight));
    b = store.add(name + ".b", Tensor::zeros({out}));
}

ad::Val Linear::forward(ad::Tape& t, const Bound& p, ad::Val x) const {
    // Copied: ops below grow the tape and can invalidate references into it.
    const std::vector<int64_t> in_shape = t.val(x).shape();
    if (in_shape.back() != in_dim) throw std::invalid_argument("linear: width mismatch");
    ad::Val flat = x;
    if (in_shape.size() != 2)
        flat = ad::reshape(t, x, {Tensor::compute_numel(in_shape) / in_dim, in_dim});
    ad::Val y = ad::add_bias(t, ad::matmul(t, flat, p[w]), p[b]);
    if (in_shape.size() != 2) {
        std::vector<int64_t> out_shape(in_shape.begin(), in_shape.end() - 1);
        out_shape.push_back(out_dim);
        y = ad::reshape(t, y, std::move(out_shape));
    }
    return y;
}

ConvTime::ConvTime(ParamStore& store, const std::string& name, int64_t in_ch_, int64_t out_ch_,
                   int f_, int stride_, int pad_, Rng& rng, bool zero_init)
    : f(f_), stride(stride_), pad(pad_), in_ch(in_ch_), out_ch(out_ch_) {
    int64_t rows = static_cast<int64_t>(f) * in_ch;
    Tensor weight = zero_init ? Tensor::zeros({rows, out_ch})
                              : xavier_uniform({rows, out_ch}, rows, f * out_ch, rng);
    w = store.add(name + ".w", std::move(weight));
    b = store.add(name + ".b", Tensor::zeros({out_ch}));
}

ad::Val ConvTime::forward(ad::Tape& t, const Bound& p, ad::Val x) const {
    const Tensor& xv = t.val(x);
    if (xv.rank() != 3) throw std::invalid_argument("conv_time: rank-3 input expected");
    if (xv.dim(2) != in_ch) throw std::invalid_argument("conv_time: channel mismatch");
    int64_t q = xv.dim(0);
    int64_t t_in = xv.dim(1);
    int64_t t_out = (t_in + 2 * pad - f) / stride + 1;
    ad::Val cols = ad::im2col_time(t, x, f, stride, pad);
    ad::Val y = ad::add_bias(t, ad::matmul(t, cols, p[w]), p[b]);
    return ad::reshape(t, y, {q, t_out, out_ch});
}

Conv2D::Conv2D(ParamStore& store, const std::string& name, int64_t in_ch_, int64_t out_ch_,
               int f_, int stride_, int pad_, Rng& rng)
    : f(f_), stride(stride_), pad(pad_), in_ch(in_ch_), out_ch(out_ch_) {
    int64_t rows = static_cast<int64_t>(f) * f * in_ch;
    w = store.add(name + ".w", xavier_uniform({rows, out_ch}, rows, f * f * out_ch, rng));
    b = store.add(name + ".b", Tensor::zeros({out_ch}));
}

ad::Val Conv2D::forward(ad::Tape& t, const Bound& p, ad::Val x) const {
    const Tensor& xv = t.val(x);
    if (xv.rank() != 3) throw std::invalid_argument("conv2d: rank-3 input expected");
    if (xv.dim(2) != in_ch) throw std::invalid_argument("conv2d: channel mismatch");
    int64_t h = xv.dim(0);
    int64_t w_in = xv.dim(1);
    int64_t h_out = (h + 2 * pad - f) / stride + 1;
    int64_t w_out = (w_in + 2 * pad - f) / stride + 1;
    // Sweep the width axis, swap, sweep the height axis; the two passes
    // together enumerate every f x f patch.
    ad::Val cols = ad::im2col_time(t, x, f, stride, pad);
    cols = ad::reshape(t, cols, {h, w_out, static_cast<int64_t>(f) * in_ch});
    cols = ad::transpose_01(t, cols);
    cols = ad::im2col_time(t, cols, f, stride, pad);
    cols = ad::reshape(t, cols, {w_out, h_out, static_cast<int64_t>(f) * f * in_ch});
    cols = ad::transpose_01(t, cols);
    cols = ad::reshape(t, cols, {h_out * w_out, static_cast<int64_t>(f) * f * in_ch});
    ad::Val y = ad::add_bias(t, ad::matmul(t, cols, p[w]), p[b]);
    return ad::reshape(t, y, {h_out, w_out, out_ch});
}

LayerNormLayer::LayerNormLayer(ParamStore& store, const std::string& name, int64_t dim) {
    gamma = store.add(name + ".gamma", Tensor::full({dim}, 1.0));
    beta = store.add(name + ".beta", Tensor::zeros({dim}));
}

ad::Val LayerNormLayer::forward(ad::Tape& t, const Bound& p, ad::Val x) const {
    return ad::layer_norm(t, x, p[gamma], p[beta]);
}

GroupNormLayer::GroupNormLayer(ParamStore& store, const std::string& name, int64_t channels,
                               int groups_)
    : groups(groups_) {
    if (channels % groups != 0)
        throw std::invalid_argument("group_norm: channels not divisible by groups");
    gamma = store.add(name + ".gamma", Tensor::full({channels}, 1.0));
    beta = store.add(name + ".beta", Tensor::zeros({channels}));
}

ad::Val GroupNormLayer::forward(ad::Tape& t, const Bound& p, ad::Val x) const {
    return ad::group_norm(t, x, p[gamma], p[beta], groups);
}

SelfAttention::SelfAttention(ParamStore& store, const std::string& name, int64_t dim_, int heads_,
                             Rng& rng)
    : heads(heads_), dim(dim_) {
    if (dim % heads != 0) throw std::invalid_argument("attention: dim not divisible by heads");
    q_proj = Linear(store, name + ".q", dim, dim, rng);
    k_proj = Linear(store, name + ".k", dim, dim, rng);
    v_proj = Linear(store, name + ".v", dim, dim, rng);
    o_proj = Linear(store, name + ".o", dim, dim, rng);
}

namespace {

/// Scaled dot-product attention per head over already-projected Q, K, V.
ad::Val multi_head(ad::Tape& t, ad::Val Q, ad::Val K, ad::Val V, int heads, int64_t dim) {
    int64_t dh = dim / heads;
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<ad::Val> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        ad::Val qh = ad::slice_cols(t, Q, h * dh, dh);
        ad::Val kh = ad::slice_cols(t, K, h * dh, dh);
        ad::Val vh = ad::slice_cols(t, V, h * dh, dh);
        ad::Val scores = ad::scale(t, ad::matmul(t, qh, kh, false, true), inv_sqrt);
        ad::Val attn = ad::softmax_rows(t, scores);
        head_outs.push_back(ad::matmul(t, attn, vh));
    }
    return ad::concat_cols(t, head_outs);
}

}  // namespace

ad::Val SelfAttention::forward(ad::Tape& t, const Bound& p, ad::Val x) const {
    ad::Val Q = q_proj.forward(t, p, x);
    ad::Val K = k_proj.forward(t, p, x);
    ad::Val V = v_proj.forward(t, p, x);
    return o_proj.forward(t, p, multi_head(t, Q, K, V, heads, dim));
}

CrossAttention::CrossAttention(ParamStore& store, const std::string& name, int64_t dim_,
                               int64_t cond_dim_, int heads_, Rng& rng)
    : heads(heads_), dim(dim_), cond_dim(cond_dim_) {
    if (dim % heads != 0) throw std::invalid_argument("attention: dim not divisible by heads");
    q_proj = Linear(store, name + ".q", dim, dim, rng);
    k_proj = Linear(store, name + ".k", cond_dim, dim, rng);
    v_proj = Linear(store, name + ".v", cond_dim, dim, rng);
    o_proj = Linear(store, name + ".o", dim, dim, rng);
}

ad::Val CrossAttention::forward(ad::Tape& t, const Bound& p, ad::Val x, ad::Val cond) const {
    ad::Val Q = q_proj.forward(t, p, x);
    ad::Val K = k_proj.forward(t, p, cond);
    ad::Val V = v_proj.forward(t, p, cond);
    return o_proj.forward(t, p, multi_head(t, Q, K, V, heads, dim));
}

FeedForward::FeedForward(ParamStore& store, const std::string& name, int64_t dim, int64_t hidden,
                         Rng& rng) {
    fc1 = Linear(store, name + ".fc1", dim, hidden, rng);
    fc2 = Linear(store, name + ".fc2", hidden, dim, rng);
}

ad::Val FeedForward::forward(ad::Tape& t, const Bound& p, ad::Val x) const {
    return fc2.forward(t, p, ad::gelu(t, fc1.forward(t, p, x)));
}

EncoderBlock::EncoderBlock(ParamStore& store, const std::string& name, int64_t dim, int heads,
                           Rng& rng) {
    ln_self = LayerNormLayer(store, name + ".ln_self", dim);
    self_attn = SelfAttention(store, name + ".self", dim, heads, rng);
    ln_ff = LayerNormLayer(store, name + ".ln_ff", dim);
    ff = FeedForward(store, name + ".ff", dim, 4 * dim, rng);
}

ad::Val EncoderBlock::forward(ad::Tape& t, const Bound& p, ad::Val x) const {
    ad::Val h = ad::add(t, x, self_attn.forward(t, p, ln_self.forward(t, p, x)));
    return ad::add(t, h, ff.forward(t, p, ln_ff.forward(t, p, h)));
}

TransformerBlock::TransformerBlock(ParamStore& store, const std::string& name, int64_t dim_,
                                   int64_t cond_dim, int heads, int groups, Rng& rng)
    : dim(dim_) {
    norm_in = GroupNormLayer(store, name + ".norm_in", dim, groups);
    proj_in = Linear(store, name + ".proj_in", dim, dim, rng);
    ln_self = LayerNormLayer(store, name + ".ln_self", dim);
    self_attn = SelfAttention(store, name + ".self", dim, heads, rng);
    ln_cross = LayerNormLayer(store, name + ".ln_cross", dim);
    cross_attn = CrossAttention(store, name + ".cross", dim, cond_dim, heads, rng);
    ln_ff = LayerNormLayer(store, name + ".ln_ff", dim);
    ff = FeedForward(store, name + ".ff", dim, 4 * dim, rng);
    proj_out = Linear(store, name + ".proj_out", dim, dim, rng, /*zero_init=*/true);
}

ad::Val TransformerBlock::forward(ad::Tape& t, const Bound& p, ad::Val x, ad::Val cond) const {
    const std::vector<int64_t> in_shape = t.val(x).shape();
    int64_t s = t.val(x).numel() / dim;
    ad::Val h = norm_in.forward(t, p, x);
    h = ad::reshape(t, h, {s, dim});
    h = proj_in.forward(t, p, h);
    h = ad::add(t, h, self_attn.forward(t, p, ln_self.forward(t, p, h)));
    h = ad::add(t, h, cross_attn.forward(t, p, ln_cross.forward(t, p, h), cond));
    h = ad::add(t, h, ff.forward(t, p, ln_ff.forward(t, p, h)));
    h = proj_out.forward(t, p, h);
    h = ad::reshape(t, h, in_shape);
    return ad::add(t, x, h);
}

ResBlock::ResBlock(ParamStore& store, const std::string& name, int64_t in_ch_, int64_t out_ch_,
                   int64_t time_dim, int f, int groups, Rng& rng)
    : in_ch(in_ch_), out_ch(out_ch_) {
    int pad = (f - 1) / 2;
    norm1 = GroupNormLayer(store, name + ".norm1", in_ch, groups);
    conv1 = ConvTime(store, name + ".conv1", in_ch, out_ch, f, 1, pad, rng);
    time_proj = Linear(store, name + ".time", time_dim, out_ch, rng);
    norm2 = GroupNormLayer(store, name + ".norm2", out_ch, groups);
    conv2 = ConvTime(store, name + ".conv2", out_ch, out_ch, f, 1, pad, rng, /*zero_init=*/true);
    needs_skip = in_ch != out_ch;
    if (needs_skip) skip = Linear(store, name + ".skip", in_ch, out_ch, rng);
}

ad::Val ResBlock::forward(ad::Tape& t, const Bound& p, ad::Val x, ad::Val t_emb) const {
    ad::Val h = conv1.forward(t, p, ad::silu(t, norm1.forward(t, p, x)));
    ad::Val time_row = time_proj.forward(t, p, ad::silu(t, t_emb));
    h = ad::add_bias(t, h, time_row);
    h = conv2.forward(t, p, ad::silu(t, norm2.forward(t, p, h)));
    ad::Val base = needs_skip ? skip.forward(t, p, x) : x;
    return ad::add(t, base, h);
}

TimeEmbed::TimeEmbed(ParamStore& store, const std::string& name, int64_t feat_dim_,
                     int64_t out_dim_, Rng& rng)
    : feat_dim(feat_dim_), out_dim(out_dim_) {
    fc1 = Linear(store, name + ".fc1", feat_dim, out_dim, rng);
    fc2 = Linear(store, name + ".fc2", out_dim, out_dim, rng);
}

ad::Val TimeEmbed::forward(ad::Tape& t, const Bound& p, double timestep) const {
    ad::Val feats = t.leaf(timestep_features(timestep, feat_dim));
    return fc2.forward(t, p, ad::silu(t, fc1.forward(t, p, feats)));
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

Adam::Adam(const ParamStore& store, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.reserve(static_cast<size_t>(store.size()));
    v_.reserve(static_cast<size_t>(store.size()));
    for (const ParamStore::Entry& e : store.entries()) {
        m_.push_back(Tensor::zeros(e.value.shape()));
        v_.push_back(Tensor::zeros(e.value.shape()));
    }
}

void Adam::step(ParamStore& store, const std::vector<Tensor>& grads, double lr) {
    if (static_cast<int>(grads.size()) != store.size())
        throw std::invalid_argument("adam: gradient count mismatch");
    ++steps_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    for (int i = 0; i < store.size(); ++i) {
        Tensor& param = store.value(i);
        const Tensor& g = grads[static_cast<size_t>(i)];
        if (!same_shape(param, g)) throw std::invalid_argument("adam: gradient shape mismatch");
        Tensor& m = m_[static_cast<size_t>(i)];
        Tensor& v = v_[static_cast<size_t>(i)];
        for (int64_t j = 0; j < param.numel(); ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            param[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

}  // namespace genqc::nn
