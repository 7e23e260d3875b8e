#include "genqc/condition_encoder.hpp"

#include <algorithm>
#include <stdexcept>

namespace genqc {

namespace {

constexpr const char* kSrvPrefix = "Generate SRV: [";
constexpr const char* kCompilePrefix = "Compile using: [";

// Token ids: 0 pad, 1 SRV keyword, 2 compile keyword, 3 '[', 4 ']',
// 5 rank 1, 6 rank 2, then one id per configured gate name.
constexpr int kPad = 0;
constexpr int kKwSrv = 1;
constexpr int kKwCompile = 2;
constexpr int kLBracket = 3;
constexpr int kRBracket = 4;
constexpr int kRankBase = 4;  // rank r in {1,2} maps to kRankBase + r
constexpr int kGateBase = 7;

std::vector<std::string> split_items(const std::string& inner) {
    std::vector<std::string> items;
    size_t start = 0;
    while (true) {
        size_t sep = inner.find(", ", start);
        if (sep == std::string::npos) {
            items.push_back(inner.substr(start));
            return items;
        }
        items.push_back(inner.substr(start, sep - start));
        start = sep + 2;
    }
}

[[noreturn]] void bad_prompt(const std::string& prompt, const std::string& why) {
    throw std::invalid_argument("unparseable prompt \"" + prompt + "\": " + why);
}

}  // namespace

ParsedPrompt parse_prompt(const std::string& prompt, const std::vector<std::string>& gate_names) {
    bool srv = prompt.rfind(kSrvPrefix, 0) == 0;
    bool compile = prompt.rfind(kCompilePrefix, 0) == 0;
    if (!srv && !compile) bad_prompt(prompt, "expected a Generate SRV or Compile using form");
    if (prompt.empty() || prompt.back() != ']') bad_prompt(prompt, "missing closing bracket");

    size_t open = prompt.find('[');
    std::string inner = prompt.substr(open + 1, prompt.size() - open - 2);
    if (inner.empty()) bad_prompt(prompt, "empty list");
    std::vector<std::string> items = split_items(inner);

    ParsedPrompt out;
    if (srv) {
        out.task = ParsedPrompt::Task::Srv;
        for (const std::string& it : items) {
            if (it != "1" && it != "2") bad_prompt(prompt, "rank entries must be 1 or 2");
            out.srv.push_back(it == "1" ? 1 : 2);
        }
    } else {
        out.task = ParsedPrompt::Task::Compile;
        for (const std::string& it : items) {
            if (std::find(gate_names.begin(), gate_names.end(), it) == gate_names.end())
                bad_prompt(prompt, "unknown gate \"" + it + "\"");
            out.gates.push_back(it);
        }
        for (size_t i = 1; i < out.gates.size(); ++i)
            if (!(out.gates[i - 1] < out.gates[i]))
                bad_prompt(prompt, "gates must be sorted and distinct");
    }
    return out;
}

std::vector<int> tokenize_prompt(const std::string& prompt, const ConditionEncoderConfig& cfg) {
    ParsedPrompt parsed = parse_prompt(prompt, cfg.gate_names);
    std::vector<int> ids;
    if (parsed.task == ParsedPrompt::Task::Srv) {
        ids.push_back(kKwSrv);
        ids.push_back(kLBracket);
        for (int r : parsed.srv) ids.push_back(kRankBase + r);
    } else {
        ids.push_back(kKwCompile);
        ids.push_back(kLBracket);
        for (const std::string& g : parsed.gates) {
            auto it = std::find(cfg.gate_names.begin(), cfg.gate_names.end(), g);
            ids.push_back(kGateBase + static_cast<int>(it - cfg.gate_names.begin()));
        }
    }
    ids.push_back(kRBracket);
    if (static_cast<int>(ids.size()) > cfg.l_text)
        bad_prompt(prompt, "needs " + std::to_string(ids.size()) + " tokens but l_text is " +
                               std::to_string(cfg.l_text));
    ids.resize(static_cast<size_t>(cfg.l_text), kPad);
    return ids;
}

ConditionEncoder::ConditionEncoder(nn::ParamStore& store, const ConditionEncoderConfig& cfg,
                                   Rng& rng)
    : cfg_(cfg) {
    if (cfg_.c_cond % 2 != 0) throw std::invalid_argument("c_cond must be even");
    if (cfg_.dropout < 0.0 || cfg_.dropout >= 1.0)
        throw std::invalid_argument("dropout must lie in [0, 1)");
    int64_t c = cfg_.c_cond;
    token_table_ = store.add("cond.tokens",
                             nn::xavier_uniform({vocab_size(), c}, vocab_size(), c, rng));
    null_seq_ = store.add("cond.null",
                          nn::xavier_uniform({cfg_.l_text, c}, cfg_.l_text, c, rng));
    prompt_block_ = nn::EncoderBlock(store, "cond.prompt", c, cfg_.heads, rng);
    if (cfg_.compile_qubits > 0) {
        conv_in_ = nn::Conv2D(store, "cond.uenc.conv_in", 2, c, 3, 1, 1, rng);
        unitary_block1_ = nn::EncoderBlock(store, "cond.uenc.attn1", c, cfg_.heads, rng);
        downscale_ = nn::Conv2D(store, "cond.uenc.down", c, c, 2, 2, 0, rng);
        unitary_block2_ = nn::EncoderBlock(store, "cond.uenc.attn2", c, cfg_.heads, rng);
    }
}

int ConditionEncoder::vocab_size() const {
    return kGateBase + static_cast<int>(cfg_.gate_names.size());
}

ad::Val ConditionEncoder::embed_prompt(ad::Tape& t, const nn::Bound& p,
                                       const std::string& prompt) const {
    std::vector<int> ids = tokenize_prompt(prompt, cfg_);
    ad::Val h = ad::gather_rows(t, p[token_table_], ids);
    h = ad::add_const(t, h, nn::positional_encoding_1d(cfg_.l_text, cfg_.c_cond));
    return prompt_block_.forward(t, p, h);
}

ad::Val ConditionEncoder::encode_unitary(ad::Tape& t, const nn::Bound& p, const CMatrix& u,
                                         bool train, Rng* rng) const {
    if (cfg_.compile_qubits <= 0)
        throw std::logic_error("this model has no unitary branch");
    int64_t dim = int64_t{1} << cfg_.compile_qubits;
    if (u.rows() != dim || u.cols() != dim)
        throw std::invalid_argument("unitary dimension mismatch: expected " +
                                    std::to_string(dim) + "x" + std::to_string(dim));
    if (train && cfg_.dropout > 0.0 && rng == nullptr)
        throw std::invalid_argument("training-mode encode_unitary needs an rng");

    Tensor img({dim, dim, 2});
    for (int64_t r = 0; r < dim; ++r)
        for (int64_t cc = 0; cc < dim; ++cc) {
            img.at(r, cc, 0) = u(r, cc).real();
            img.at(r, cc, 1) = u(r, cc).imag();
        }

    int64_t c = cfg_.c_cond;
    ad::Val h = conv_in_.forward(t, p, t.leaf(std::move(img)));
    h = ad::add_const(t, h, nn::positional_encoding_2d(dim, dim, c));
    h = ad::reshape(t, h, {dim * dim, c});
    h = unitary_block1_.forward(t, p, h);
    if (train) h = ad::dropout(t, h, cfg_.dropout, *rng, true);
    h = ad::reshape(t, h, {dim, dim, c});
    h = downscale_.forward(t, p, h);
    int64_t l = dim / 2;
    h = ad::reshape(t, h, {l * l, c});
    h = unitary_block2_.forward(t, p, h);
    if (train) h = ad::dropout(t, h, cfg_.dropout, *rng, true);
    return h;
}

ad::Val ConditionEncoder::null_condition(ad::Tape& t, const nn::Bound& p) const {
    return p[null_seq_];
}

ad::Val ConditionEncoder::assemble_condition(ad::Tape& t, const nn::Bound& p, ad::Val prompt_emb,
                                             std::optional<ad::Val> unitary_emb,
                                             bool null) const {
    if (null) return null_condition(t, p);
    if (!unitary_emb.has_value()) return prompt_emb;
    if (t.val(prompt_emb).last_dim() != t.val(*unitary_emb).last_dim())
        throw std::invalid_argument("condition width mismatch");
    return ad::concat_rows(t, {prompt_emb, *unitary_emb});
}

int64_t ConditionEncoder::condition_length(bool with_unitary) const {
    int64_t len = cfg_.l_text;
    if (with_unitary) {
        int64_t l = (int64_t{1} << cfg_.compile_qubits) / 2;
        len += l * l;
    }
    return len;
}

}  // namespace genqc
