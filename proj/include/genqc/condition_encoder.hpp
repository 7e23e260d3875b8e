#pragma once

#include <optional>
#include <string>
#include <vector>

#include "genqc/nn.hpp"
#include "genqc/quantum_sim.hpp"
#include "genqc/rng.hpp"

namespace genqc {

/// Layout of the conditioning pathway. gate_names is the lowercase gate
/// set accepted by compile prompts; compile_qubits is the fixed qubit count
/// of the unitary branch, or 0 when the model has no such branch.
struct ConditionEncoderConfig {
    int l_text = 16;
    int c_cond = 64;
    int heads = 4;
    int compile_qubits = 0;
    double dropout = 0.1;
    std::vector<std::string> gate_names;
};

/// A parsed prompt: which task it requests and its payload.
struct ParsedPrompt {
    enum class Task { Srv, Compile } task;
    std::vector<int> srv;                  // per-qubit ranks, Srv only
    std::vector<std::string> gates;        // lowercase names, Compile only
};

/// Parses one of the two canonical prompt forms:
///   "Generate SRV: [1, 2, 2]"        ranks in {1, 2}
///   "Compile using: [cx, h, x]"      known gates, sorted, distinct
/// Throws std::invalid_argument on anything else.
ParsedPrompt parse_prompt(const std::string& prompt, const std::vector<std::string>& gate_names);

/// Token ids for a prompt: task keyword, brackets, digits and gate names,
/// padded to l_text. Throws if the prompt does not fit.
std::vector<int> tokenize_prompt(const std::string& prompt, const ConditionEncoderConfig& cfg);

/// Trainable conditioning stack: prompt embedder, unitary encoder and the
/// learned null sequence. Parameters are registered on the given store;
/// forward passes are pure given a binding of those parameters.
class ConditionEncoder {
  public:
    ConditionEncoder(nn::ParamStore& store, const ConditionEncoderConfig& cfg, Rng& rng);

    const ConditionEncoderConfig& config() const { return cfg_; }

    /// Number of token ids the embedding table distinguishes.
    int vocab_size() const;

    /// (l_text, c_cond) embedding of a canonical prompt.
    ad::Val embed_prompt(ad::Tape& t, const nn::Bound& p, const std::string& prompt) const;

    /// (l*l, c_cond) embedding of a unitary; l = 2^compile_qubits / 2.
    /// Dropout fires only when train is true, drawing from rng.
    ad::Val encode_unitary(ad::Tape& t, const nn::Bound& p, const CMatrix& u, bool train,
                           Rng* rng = nullptr) const;

    /// The learned null sequence (l_text, c_cond) used for unconditional passes.
    ad::Val null_condition(ad::Tape& t, const nn::Bound& p) const;

    /// Concatenates prompt and (optionally) unitary embeddings along the
    /// sequence axis; with null set, returns the null sequence instead.
    ad::Val assemble_condition(ad::Tape& t, const nn::Bound& p, ad::Val prompt_emb,
                               std::optional<ad::Val> unitary_emb, bool null) const;

    /// Sequence length assemble_condition produces for the given mode.
    int64_t condition_length(bool with_unitary) const;

  private:
    ConditionEncoderConfig cfg_;
    int token_table_ = -1;
    int null_seq_ = -1;
    nn::EncoderBlock prompt_block_;
    nn::Conv2D conv_in_;
    nn::Conv2D downscale_;
    nn::EncoderBlock unitary_block1_;
    nn::EncoderBlock unitary_block2_;
};

}  // namespace genqc
