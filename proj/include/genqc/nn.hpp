#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "genqc/autodiff.hpp"
#include "genqc/rng.hpp"
#include "genqc/tensor.hpp"

namespace genqc::nn {

/// Named parameter tensors with stable integer handles. Layers register
/// their parameters here at construction time and keep only the handles;
/// a forward pass binds the current values onto a fresh tape.
class ParamStore {
  public:
    struct Entry {
        std::string name;
        Tensor value;
    };

    /// Registers a parameter; the name must be unique within the store.
    int add(std::string name, Tensor value);

    int index_of(const std::string& name) const;
    bool contains(const std::string& name) const { return by_name_.count(name) > 0; }

    Tensor& value(int idx) { return entries_.at(static_cast<size_t>(idx)).value; }
    const Tensor& value(int idx) const { return entries_.at(static_cast<size_t>(idx)).value; }
    const std::string& name(int idx) const { return entries_.at(static_cast<size_t>(idx)).name; }

    int size() const { return static_cast<int>(entries_.size()); }
    int64_t total_elements() const;

    const std::vector<Entry>& entries() const { return entries_; }

  private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> by_name_;
};

/// Tape handles for every parameter in a store, indexed by store handle.
struct Bound {
    std::vector<ad::Val> vals;
    ad::Val operator[](int idx) const { return vals.at(static_cast<size_t>(idx)); }
};

/// Places every parameter on the tape as a leaf.
Bound bind(ad::Tape& tape, const ParamStore& store, bool requires_grad);

/// Gradients per parameter after backward(); zero tensors where a parameter
/// did not participate in the graph.
std::vector<Tensor> collect_grads(ad::Tape& tape, const Bound& bound, const ParamStore& store);

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Glorot uniform draw in [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))].
Tensor xavier_uniform(std::vector<int64_t> shape, int64_t fan_in, int64_t fan_out, Rng& rng);

// ---------------------------------------------------------------------------
// Positional encodings
// ---------------------------------------------------------------------------

/// Interleaved sinusoidal table (len, dim): channel 2i holds sin(pos / 10000^(2i/dim)),
/// channel 2i+1 the matching cos.
Tensor positional_encoding_1d(int64_t len, int64_t dim);

/// Absolute 2-d encoding for a (qubits, timesteps) grid, flattened row-major to
/// (qubits*timesteps, dim). The first dim/2 channels encode the qubit index and
/// the last dim/2 the time index; dim must be even.
Tensor positional_encoding_2d(int64_t qubits, int64_t timesteps, int64_t dim);

/// Sinusoidal features of a (possibly fractional) scalar position, shape (1, dim).
Tensor timestep_features(double t, int64_t dim);

// ---------------------------------------------------------------------------
// Layers. Each registers its parameters on construction and stores handles;
// forward() consumes tape values and returns a tape value.
// ---------------------------------------------------------------------------

/// Affine map on the last dimension: (.., in) -> (.., out).
struct Linear {
    int w = -1;
    int b = -1;
    int64_t in_dim = 0;
    int64_t out_dim = 0;

    Linear() = default;
    Linear(ParamStore& store, const std::string& name, int64_t in, int64_t out, Rng& rng,
           bool zero_init = false);

    ad::Val forward(ad::Tape& t, const Bound& p, ad::Val x) const;
};

/// Convolution along the time axis only; kernels have extent 1 in the qubit
/// axis by construction. Input and output are rank-3 (qubits, T, channels).
struct ConvTime {
    int w = -1;
    int b = -1;
    int f = 3;
    int stride = 1;
    int pad = 1;
    int64_t in_ch = 0;
    int64_t out_ch = 0;

    ConvTime() = default;
    ConvTime(ParamStore& store, const std::string& name, int64_t in_ch, int64_t out_ch, int f,
             int stride, int pad, Rng& rng, bool zero_init = false);

    ad::Val forward(ad::Tape& t, const Bound& p, ad::Val x) const;
};

/// Full 2-d convolution on an (H, W, channels) image, built from two
/// single-axis im2col passes. Weight rows are ordered (kh, kw, in_ch).
struct Conv2D {
    int w = -1;
    int b = -1;
    int f = 3;
    int stride = 1;
    int pad = 1;
    int64_t in_ch = 0;
    int64_t out_ch = 0;

    Conv2D() = default;
    Conv2D(ParamStore& store, const std::string& name, int64_t in_ch, int64_t out_ch, int f,
           int stride, int pad, Rng& rng);

    ad::Val forward(ad::Tape& t, const Bound& p, ad::Val x) const;
};

struct LayerNormLayer {
    int gamma = -1;
    int beta = -1;

    LayerNormLayer() = default;
    LayerNormLayer(ParamStore& store, const std::string& name, int64_t dim);

    ad::Val forward(ad::Tape& t, const Bound& p, ad::Val x) const;
};

struct GroupNormLayer {
    int gamma = -1;
    int beta = -1;
    int groups = 8;

    GroupNormLayer() = default;
    GroupNormLayer(ParamStore& store, const std::string& name, int64_t channels, int groups);

    ad::Val forward(ad::Tape& t, const Bound& p, ad::Val x) const;
};

/// Multi-head scaled dot-product attention over all rows of a (S, C) sequence.
struct SelfAttention {
    Linear q_proj, k_proj, v_proj, o_proj;
    int heads = 4;
    int64_t dim = 0;

    SelfAttention() = default;
    SelfAttention(ParamStore& store, const std::string& name, int64_t dim, int heads, Rng& rng);

    ad::Val forward(ad::Tape& t, const Bound& p, ad::Val x) const;
};

/// Attention with queries from x and keys/values from a conditioning sequence.
struct CrossAttention {
    Linear q_proj, k_proj, v_proj, o_proj;
    int heads = 4;
    int64_t dim = 0;
    int64_t cond_dim = 0;

    CrossAttention() = default;
    CrossAttention(ParamStore& store, const std::string& name, int64_t dim, int64_t cond_dim,
                   int heads, Rng& rng);

    ad::Val forward(ad::Tape& t, const Bound& p, ad::Val x, ad::Val cond) const;
};

struct FeedForward {
    Linear fc1, fc2;

    FeedForward() = default;
    FeedForward(ParamStore& store, const std::string& name, int64_t dim, int64_t hidden, Rng& rng);

    ad::Val forward(ad::Tape& t, const Bound& p, ad::Val x) const;
};

/// Pre-norm transformer encoder block: self-attention and feed-forward
/// stages, each behind a residual connection.
struct EncoderBlock {
    LayerNormLayer ln_self, ln_ff;
    SelfAttention self_attn;
    FeedForward ff;

    EncoderBlock() = default;
    EncoderBlock(ParamStore& store, const std::string& name, int64_t dim, int heads, Rng& rng);

    ad::Val forward(ad::Tape& t, const Bound& p, ad::Val x) const;
};

/// Pre-norm transformer block with self-attention, optional cross-attention
/// and a feed-forward stage, wrapped in an outer residual connection whose
/// final projection starts at zero.
struct TransformerBlock {
    GroupNormLayer norm_in;
    Linear proj_in, proj_out;
    LayerNormLayer ln_self, ln_cross, ln_ff;
    SelfAttention self_attn;
    CrossAttention cross_attn;
    FeedForward ff;
    int64_t dim = 0;

    TransformerBlock() = default;
    TransformerBlock(ParamStore& store, const std::string& name, int64_t dim, int64_t cond_dim,
                     int heads, int groups, Rng& rng);

    /// x is rank-3 (qubits, T, dim); cond is (L, cond_dim).
    ad::Val forward(ad::Tape& t, const Bound& p, ad::Val x, ad::Val cond) const;
};

/// Residual convolution block; the timestep embedding enters the residual
/// branch between the two convolutions. Second convolution starts at zero.
struct ResBlock {
    GroupNormLayer norm1, norm2;
    ConvTime conv1, conv2;
    Linear time_proj;
    Linear skip;
    bool needs_skip = false;
    int64_t in_ch = 0;
    int64_t out_ch = 0;

    ResBlock() = default;
    ResBlock(ParamStore& store, const std::string& name, int64_t in_ch, int64_t out_ch,
             int64_t time_dim, int f, int groups, Rng& rng);

    /// x is rank-3 (qubits, T, in_ch); t_emb is (1, time_dim).
    ad::Val forward(ad::Tape& t, const Bound& p, ad::Val x, ad::Val t_emb) const;
};

/// Sinusoidal timestep features passed through a two-layer MLP.
struct TimeEmbed {
    Linear fc1, fc2;
    int64_t feat_dim = 0;
    int64_t out_dim = 0;

    TimeEmbed() = default;
    TimeEmbed(ParamStore& store, const std::string& name, int64_t feat_dim, int64_t out_dim,
              Rng& rng);

    ad::Val forward(ad::Tape& t, const Bound& p, double timestep) const;
};

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam with bias correction; moment buffers are aligned with the store.
class Adam {
  public:
    explicit Adam(const ParamStore& store, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);

    void step(ParamStore& store, const std::vector<Tensor>& grads, double lr);

    long steps_taken() const { return steps_; }

  private:
    double beta1_;
    double beta2_;
    double eps_;
    long steps_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

}  // namespace genqc::nn
