#include "memnorm/seq2seq.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

using namespace memnorm;

namespace {

std::mt19937_64 rng(13);

Seq2SeqConfig tiny_config(Eigen::Index kx, Eigen::Index ky) {
    Seq2SeqConfig cfg;
    cfg.input_vocab = kx;
    cfg.output_vocab = ky;
    cfg.embedding = 4;
    cfg.attn_units = 5;
    cfg.dnc.memory_locations = 4;
    cfg.dnc.word_size = 3;
    cfg.dnc.read_heads = 1;
    cfg.dnc.hidden = 8;
    cfg.dnc.output_size = 6;
    cfg.dnc.input_size = cfg.embedding + cfg.annotation_dim();
    return cfg;
}

}  // namespace

TEST_CASE("vocab reserves the four control symbols") {
    Vocab v;
    CHECK(v.size() == 4);
    CHECK(v.id("<pad>") == kPadId);
    CHECK(v.id("<go>") == kGoId);
    CHECK(v.id("<eos>") == kEosId);
    CHECK(v.id("<unk>") == kUnkId);
    CHECK(v.id("never-seen") == kUnkId);
    int a = v.add("alpha");
    CHECK(a == 4);
    CHECK(v.add("alpha") == 4);
    CHECK(v.symbol(4) == "alpha");
}

TEST_CASE("vocab file round-trip") {
    Vocab v;
    v.add("a");
    v.add("km");
    v.add(" ");
    std::string file = "vocab_roundtrip_test.txt";
    v.save(file);
    Vocab w = Vocab::load(file);
    CHECK(w.size() == v.size());
    for (int i = 0; i < v.size(); ++i) CHECK(w.symbol(i) == v.symbol(i));
    std::remove(file.c_str());
}

TEST_CASE("config validation") {
    Seq2SeqConfig cfg = tiny_config(10, 10);
    CHECK_NOTHROW(cfg.validate());
    cfg.dnc.input_size = cfg.embedding;  // missing the context slot
    CHECK_THROWS(cfg.validate());
    cfg = tiny_config(3, 10);  // below the reserved four
    CHECK_THROWS(cfg.validate());
}

TEST_CASE("utf8 characters split correctly") {
    auto chars = utf8_chars("a10 km");
    REQUIRE(chars.size() == 6);
    CHECK(chars[0] == "a");
    CHECK(chars[3] == " ");
    auto cyr = utf8_chars("га");  // two 2-byte code points
    REQUIRE(cyr.size() == 2);
    CHECK(cyr[0] == "г");
    CHECK(cyr[1] == "а");
}

TEST_CASE("format_input wraps the target and spells the window") {
    std::vector<std::string> tokens = {"The", "city", "is", "15km", "away", "from", "here", "now"};
    auto syms = format_input(tokens, 3, 3);
    // "The city is <norm> 15km </norm> away from here", character by character
    std::vector<std::string> want;
    auto push_word = [&](const std::string& w) {
        for (const auto& c : utf8_chars(w)) want.push_back(c);
    };
    push_word("The");
    want.push_back(" ");
    push_word("city");
    want.push_back(" ");
    push_word("is");
    want.push_back(" ");
    want.push_back(kNormOpen);
    want.push_back(" ");
    push_word("15km");
    want.push_back(" ");
    want.push_back(kNormClose);
    want.push_back(" ");
    push_word("away");
    want.push_back(" ");
    push_word("from");
    want.push_back(" ");
    push_word("here");
    REQUIRE(syms.size() == want.size());
    for (size_t i = 0; i < want.size(); ++i) CHECK(syms[i] == want[i]);
}

TEST_CASE("format_input at the sentence edges") {
    std::vector<std::string> tokens = {"only"};
    auto syms = format_input(tokens, 0, 3);
    REQUIRE(syms.size() == 8);  // <norm> ' ' o n l y ' ' </norm>
    CHECK(syms.front() == kNormOpen);
    CHECK(syms.back() == kNormClose);
}

TEST_CASE("encode errors and empty input") {
    Seq2SeqConfig cfg = tiny_config(8, 8);
    Parameters params;
    seq2seq_init_params(params, cfg, rng);
    CHECK_THROWS(encode({4, 99}, params, cfg));  // out of range id
    std::vector<int> too_long((size_t)cfg.max_input_len + 1, 4);
    CHECK_THROWS(encode(too_long, params, cfg));
    auto res = encode({}, params, cfg);
    CHECK(res.annotations.len == 0);
    CHECK(res.annotations.h == nullptr);
}

TEST_CASE("encode produces one annotation per symbol") {
    Seq2SeqConfig cfg = tiny_config(8, 8);
    Parameters params;
    seq2seq_init_params(params, cfg, rng);
    auto res = encode({4, 5, 6, 4}, params, cfg);
    CHECK(res.annotations.len == 4);
    REQUIRE(res.annotations.h != nullptr);
    CHECK(res.annotations.h->shape == Shape{4, cfg.annotation_dim()});
}

TEST_CASE("attention with a single annotation returns that annotation") {
    Seq2SeqConfig cfg = tiny_config(8, 8);
    Parameters params;
    seq2seq_init_params(params, cfg, rng);
    Annotations ann;
    ann.len = 1;
    Array hv(cfg.annotation_dim());
    for (Eigen::Index i = 0; i < hv.size(); ++i) hv[i] = 0.1 * (double)(i + 1);
    ann.h = make_tensor({1, cfg.annotation_dim()}, hv);
    Tensor q = constant({cfg.annotation_dim()}, 0.3);
    Tensor c = attention_context(ann, q, params, cfg);
    for (Eigen::Index i = 0; i < hv.size(); ++i)
        CHECK(c->value[i] == doctest::Approx(hv[i]).epsilon(1e-12));
}

TEST_CASE("attention matches a scalar oracle on three annotations") {
    Seq2SeqConfig cfg = tiny_config(8, 8);
    cfg.attn_units = 3;
    Parameters params;
    seq2seq_init_params(params, cfg, rng);
    const Eigen::Index n = cfg.annotation_dim(), A = cfg.attn_units;

    Annotations ann;
    ann.len = 3;
    Array hv(3 * n);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (Eigen::Index i = 0; i < hv.size(); ++i) hv[i] = dist(rng);
    ann.h = make_tensor({3, n}, hv);
    Array qv(n);
    for (Eigen::Index i = 0; i < n; ++i) qv[i] = dist(rng);
    Tensor q = make_tensor({n}, qv);

    Tensor got = attention_context(ann, q, params, cfg);

    const Array& wq = params.get("seq2seq/attn/w_q")->value;  // [A, n] row-major
    const Array& uh = params.get("seq2seq/attn/u_h")->value;  // stored [n, A]
    const Array& vv = params.get("seq2seq/attn/v")->value;    // [A]
    std::vector<double> e(3);
    for (int i = 0; i < 3; ++i) {
        double score = 0;
        for (Eigen::Index a = 0; a < A; ++a) {
            double pre = 0;
            for (Eigen::Index j = 0; j < n; ++j)
                pre += wq[a * n + j] * qv[j] + hv[i * n + j] * uh[j * A + a];
            score += vv[a] * std::tanh(pre);
        }
        e[(size_t)i] = score;
    }
    double mx = std::max({e[0], e[1], e[2]}), z = 0;
    for (double& x : e) {
        x = std::exp(x - mx);
        z += x;
    }
    for (double& x : e) x /= z;
    for (Eigen::Index j = 0; j < n; ++j) {
        double want = 0;
        for (int i = 0; i < 3; ++i) want += e[(size_t)i] * hv[i * n + j];
        CHECK(got->value[j] == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("decode_train requires a terminating eos") {
    Seq2SeqConfig cfg = tiny_config(8, 8);
    Parameters params;
    seq2seq_init_params(params, cfg, rng);
    auto enc = encode({4, 5}, params, cfg);
    CHECK_THROWS(decode_train({4, 5}, enc.annotations, enc.state, params, cfg));
    CHECK_NOTHROW(decode_train({4, kEosId}, enc.annotations, enc.state, params, cfg));
}

TEST_CASE("zero parameters give loss ln(K_y)") {
    Seq2SeqConfig cfg = tiny_config(8, 11);
    Parameters params;
    seq2seq_init_params(params, cfg, rng);
    for (const auto& [path, slot] : params.slots()) slot.tensor->value.setZero();
    auto enc = encode({4, 5, 6}, params, cfg);
    Tensor loss = decode_train({4, 7, kEosId}, enc.annotations, enc.state, params, cfg);
    CHECK(loss->value[0] == doctest::Approx(std::log(11.0)).epsilon(1e-10));
}

TEST_CASE("greedy decode breaks ties toward the lowest id") {
    Seq2SeqConfig cfg = tiny_config(8, 6);
    Parameters params;
    seq2seq_init_params(params, cfg, rng);
    // zero everything: logits all equal, argmax must be id 0 every step
    for (const auto& [path, slot] : params.slots()) slot.tensor->value.setZero();
    auto enc = encode({4, 5}, params, cfg);
    auto out = decode_greedy(enc.annotations, enc.state, params, cfg);
    CHECK(out.size() == (size_t)cfg.max_output_len);  // never hits eos
    for (int id : out) CHECK(id == 0);
    // bias the eos logit up: decoding stops immediately with an empty result
    Tensor b = params.get("seq2seq/out/b");
    b->value[kEosId] = 5.0;
    auto out2 = decode_greedy(enc.annotations, enc.state, params, cfg);
    CHECK(out2.empty());
}

TEST_CASE("end-to-end gradient matches finite differences") {
    Seq2SeqConfig cfg = tiny_config(7, 7);
    Parameters params;
    seq2seq_init_params(params, cfg, rng);
    std::vector<int> input = {4, 5, 6};
    std::vector<int> target = {5, 4, kEosId};

    auto run = [&]() -> double {
        auto enc = encode(input, params, cfg);
        return decode_train(target, enc.annotations, enc.state, params, cfg)->value[0];
    };
    {
        auto enc = encode(input, params, cfg);
        backward(decode_train(target, enc.annotations, enc.state, params, cfg));
    }
    const double h = 1e-6;
    for (const auto& [path, slot] : params.slots()) {
        Tensor t = slot.tensor;
        if (t->grad.size() == 0) continue;  // unused rows never touched
        std::uniform_int_distribution<Eigen::Index> pick(0, t->value.size() - 1);
        for (int rep = 0; rep < 4; ++rep) {
            Eigen::Index i = pick(rng);
            double saved = t->value[i];
            t->value[i] = saved + h;
            double up = run();
            t->value[i] = saved - h;
            double down = run();
            t->value[i] = saved;
            double fd = (up - down) / (2 * h);
            double an = t->grad[i];
            double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-3});
            CHECK_MESSAGE(rel < 1e-5, path, "[", i, "]: fd=", fd, " analytic=", an);
        }
    }
    params.zero_grads();
}

TEST_CASE("three pairs can be memorized") {
    Seq2SeqConfig cfg = tiny_config(10, 10);
    cfg.dnc.hidden = 24;
    Parameters params;
    std::mt19937_64 prng(42);
    seq2seq_init_params(params, cfg, prng);

    std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs = {
        {{4, 5}, {6, kEosId}},
        {{5, 4}, {7, kEosId}},
        {{6, 6}, {8, 9, kEosId}},
    };
    AdamConfig adam;
    adam.lr = 5e-3;
    bool solved = false;
    for (int step = 0; step < 2000 && !solved; ++step) {
        for (const auto& [in, out] : pairs) {
            auto enc = encode(in, params, cfg);
            backward(decode_train(out, enc.annotations, enc.state, params, cfg));
        }
        params.adam_step(adam);
        if (step % 25 == 0) {
            solved = true;
            for (const auto& [in, out] : pairs) {
                auto enc = encode(in, params, cfg);
                auto got = decode_greedy(enc.annotations, enc.state, params, cfg);
                std::vector<int> want(out.begin(), out.end() - 1);
                if (got != want) solved = false;
            }
        }
    }
    CHECK(solved);
}

TEST_CASE("output depends on input order") {
    Seq2SeqConfig cfg = tiny_config(10, 10);
    Parameters params;
    std::mt19937_64 prng(9);
    seq2seq_init_params(params, cfg, prng);
    auto enc_a = encode({4, 5, 6}, params, cfg);
    auto enc_b = encode({6, 5, 4}, params, cfg);
    Tensor la = decode_train({4, kEosId}, enc_a.annotations, enc_a.state, params, cfg);
    Tensor lb = decode_train({4, kEosId}, enc_b.annotations, enc_b.state, params, cfg);
    CHECK(la->value[0] != doctest::Approx(lb->value[0]).epsilon(1e-12));
}
