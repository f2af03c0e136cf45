#include "memnorm/seq2seq.hpp"

#include <fstream>
#include <stdexcept>

namespace memnorm {

const std::string kNormOpen = "<norm>";
const std::string kNormClose = "</norm>";

Vocab::Vocab() {
    for (const char* s : {"<pad>", "<go>", "<eos>", "<unk>"}) add(s);
}

int Vocab::add(const std::string& symbol) {
    auto it = ids_.find(symbol);
    if (it != ids_.end()) return it->second;
    int id = static_cast<int>(symbols_.size());
    symbols_.push_back(symbol);
    ids_.emplace(symbol, id);
    return id;
}

int Vocab::id(const std::string& symbol) const {
    auto it = ids_.find(symbol);
    return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocab::symbol(int id) const {
    if (id < 0 || id >= static_cast<int>(symbols_.size()))
        throw std::out_of_range("vocab id " + std::to_string(id) + " out of range");
    return symbols_[static_cast<size_t>(id)];
}

void Vocab::save(const std::string& file) const {
    std::ofstream os(file, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write vocabulary: " + file);
    for (const auto& s : symbols_) os << s << '\n';
}

Vocab Vocab::load(const std::string& file) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read vocabulary: " + file);
    Vocab v;
    std::string line;
    int n = 0;
    while (std::getline(is, line)) {
        if (n < 4) {
            if (line != v.symbols_[static_cast<size_t>(n)])
                throw std::runtime_error("vocabulary " + file + ": reserved line " +
                                         std::to_string(n) + " is '" + line + "'");
        } else {
            v.add(line);
        }
        ++n;
    }
    return v;
}

void Seq2SeqConfig::validate() const {
    if (input_vocab < 4 || output_vocab < 4)
        throw std::invalid_argument("Seq2SeqConfig: vocabularies must cover the 4 reserved ids");
    dnc.validate();
    if (dnc.input_size != embedding + annotation_dim())
        throw std::invalid_argument("Seq2SeqConfig: dnc input size must be embedding + context");
}

void seq2seq_init_params(Parameters& params, const Seq2SeqConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    const Eigen::Index y = cfg.annotation_dim(), a = cfg.attn_units;
    params.glorot("seq2seq/emb_in", {cfg.input_vocab, cfg.embedding}, rng);
    params.glorot("seq2seq/emb_out", {cfg.output_vocab, cfg.embedding}, rng);
    params.glorot("seq2seq/attn/w_q", {a, y}, rng);
    params.glorot("seq2seq/attn/u_h", {y, a}, rng);  // stored transposed: [T,y] x [y,a]
    params.glorot("seq2seq/attn/v", {a}, rng);
    params.zeros("seq2seq/attn/q0", {y});
    params.glorot("seq2seq/out/w", {cfg.output_vocab, y}, rng);
    params.zeros("seq2seq/out/b", {cfg.output_vocab});
    dnc_init_params(params, cfg.dnc, rng);
}

EncodeResult encode(const std::vector<int>& input_ids, Parameters& params,
                    const Seq2SeqConfig& cfg, const DncStepOptions& opts) {
    if (static_cast<Eigen::Index>(input_ids.size()) > cfg.max_input_len)
        throw std::invalid_argument("encode: input length " + std::to_string(input_ids.size()) +
                                    " exceeds limit " + std::to_string(cfg.max_input_len));
    for (int id : input_ids)
        if (id < 0 || id >= cfg.input_vocab)
            throw std::invalid_argument("encode: input id " + std::to_string(id) +
                                        " out of vocabulary " + std::to_string(cfg.input_vocab));
    EncodeResult res;
    res.state = dnc_zero_state(cfg.dnc);
    if (input_ids.empty()) return res;

    Tensor emb_table = params.get("seq2seq/emb_in");
    Tensor zero_context = constant({cfg.annotation_dim()});
    std::vector<Tensor> rows;
    rows.reserve(input_ids.size());
    for (int id : input_ids) {
        Tensor emb = reshape(embedding_lookup(emb_table, {id}), {cfg.embedding});
        Tensor x = concat({emb, zero_context}, 0);
        auto [y, next] = dnc_step(res.state, x, params, cfg.dnc, opts);
        res.state = next;
        rows.push_back(reshape(y, {1, cfg.annotation_dim()}));
    }
    res.annotations.h = concat(rows, 0);
    res.annotations.len = static_cast<Eigen::Index>(input_ids.size());
    return res;
}

Tensor attention_context(const Annotations& annotations, const Tensor& query,
                         Parameters& params, const Seq2SeqConfig& cfg) {
    if (annotations.len == 0 || !annotations.h)
        throw std::invalid_argument("attention_context: empty annotations");
    const Eigen::Index y = cfg.annotation_dim();
    Tensor wq = matmul(params.get("seq2seq/attn/w_q"), query);          // [A]
    Tensor uh = matmul(annotations.h, params.get("seq2seq/attn/u_h"));  // [T, A]
    Tensor scores = matmul(tanh_t(add(uh, wq)), params.get("seq2seq/attn/v"));  // [T]
    Tensor alpha = softmax(scores);
    return reshape(matmul(reshape(alpha, {1, annotations.len}), annotations.h), {y});
}

namespace {

struct DecoderStep {
    Tensor logits;
    Tensor dnc_output;
    DncState state;
};

DecoderStep decoder_step(int prev_id, const Tensor& prev_output, const Annotations& annotations,
                         const DncState& state, Parameters& params, const Seq2SeqConfig& cfg,
                         const DncStepOptions& opts) {
    Tensor query = prev_output ? prev_output : params.get("seq2seq/attn/q0");
    Tensor context = attention_context(annotations, query, params, cfg);
    Tensor emb = reshape(embedding_lookup(params.get("seq2seq/emb_out"), {prev_id}),
                         {cfg.embedding});
    Tensor x = concat({emb, context}, 0);
    auto [y, next] = dnc_step(state, x, params, cfg.dnc, opts);
    Tensor logits = add(matmul(params.get("seq2seq/out/w"), y), params.get("seq2seq/out/b"));
    return {logits, y, next};
}

}  // namespace

Tensor decode_train(const std::vector<int>& target_ids, const Annotations& annotations,
                    const DncState& state, Parameters& params, const Seq2SeqConfig& cfg,
                    const DncStepOptions& opts) {
    if (target_ids.empty() || target_ids.back() != kEosId)
        throw std::invalid_argument("decode_train: target must end with eos");
    if (static_cast<Eigen::Index>(target_ids.size()) > cfg.max_output_len)
        throw std::invalid_argument("decode_train: target length " +
                                    std::to_string(target_ids.size()) + " exceeds limit " +
                                    std::to_string(cfg.max_output_len));
    for (int id : target_ids)
        if (id < 0 || id >= cfg.output_vocab)
            throw std::invalid_argument("decode_train: target id " + std::to_string(id) +
                                        " out of vocabulary");
    DncState s = state;
    Tensor prev_output;  // null at t=1 -> learned initial query
    int prev_id = kGoId;
    std::vector<Tensor> logit_rows;
    logit_rows.reserve(target_ids.size());
    for (int gold : target_ids) {
        DecoderStep step = decoder_step(prev_id, prev_output, annotations, s, params, cfg, opts);
        logit_rows.push_back(reshape(step.logits, {1, cfg.output_vocab}));
        s = step.state;
        prev_output = step.dnc_output;
        prev_id = gold;  // teacher forcing
    }
    Tensor logits = concat(logit_rows, 0);
    return cross_entropy_with_softmax(logits, target_ids);
}

std::vector<int> decode_greedy(const Annotations& annotations, const DncState& state,
                               Parameters& params, const Seq2SeqConfig& cfg,
                               const DncStepOptions& opts) {
    DncState s = state;
    Tensor prev_output;
    int prev_id = kGoId;
    std::vector<int> out;
    for (Eigen::Index t = 0; t < cfg.max_output_len; ++t) {
        DecoderStep step = decoder_step(prev_id, prev_output, annotations, s, params, cfg, opts);
        Eigen::Index best = 0;
        step.logits->value.maxCoeff(&best);  // first max: lowest id on ties
        int id = static_cast<int>(best);
        if (id == kEosId) break;
        out.push_back(id);
        s = step.state;
        prev_output = step.dnc_output;
        prev_id = id;
    }
    return out;
}

std::vector<std::string> utf8_chars(const std::string& s) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < s.size()) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 1;
        if (i + len > s.size()) len = 1;
        out.push_back(s.substr(i, len));
        i += len;
    }
    return out;
}

std::vector<std::string> format_input(const std::vector<std::string>& tokens, size_t target_index,
                                      size_t window) {
    if (target_index >= tokens.size())
        throw std::out_of_range("format_input: target index " + std::to_string(target_index) +
                                " out of sentence length " + std::to_string(tokens.size()));
    std::vector<std::string> words;
    size_t lo = target_index >= window ? target_index - window : 0;
    size_t hi = std::min(tokens.size(), target_index + window + 1);
    for (size_t i = lo; i < target_index; ++i) words.push_back(tokens[i]);
    words.push_back(kNormOpen);
    words.push_back(tokens[target_index]);
    words.push_back(kNormClose);
    for (size_t i = target_index + 1; i < hi; ++i) words.push_back(tokens[i]);

    std::vector<std::string> symbols;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i) symbols.push_back(" ");
        if (words[i] == kNormOpen || words[i] == kNormClose) {
            symbols.push_back(words[i]);
        } else {
            for (auto& ch : utf8_chars(words[i])) symbols.push_back(ch);
        }
    }
    return symbols;
}

}  // namespace memnorm
