#include "memnorm/featurize.hpp"

namespace memnorm {

std::vector<std::uint32_t> utf8_code_points(const std::string& s) {
    std::vector<std::uint32_t> out;
    size_t i = 0;
    while (i < s.size()) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        size_t len;
        std::uint32_t cp;
        if (c < 0x80) {
            len = 1;
            cp = c;
        } else if ((c >> 5) == 0x6) {
            len = 2;
            cp = c & 0x1F;
        } else if ((c >> 4) == 0xE) {
            len = 3;
            cp = c & 0x0F;
        } else if ((c >> 3) == 0x1E) {
            len = 4;
            cp = c & 0x07;
        } else {
            out.push_back(c);
            ++i;
            continue;
        }
        if (i + len > s.size()) {
            out.push_back(c);
            ++i;
            continue;
        }
        bool ok = true;
        for (size_t k = 1; k < len; ++k) {
            unsigned char cc = static_cast<unsigned char>(s[i + k]);
            if ((cc >> 6) != 0x2) {
                ok = false;
                break;
            }
            cp = (cp << 6) | (cc & 0x3F);
        }
        if (!ok) {
            out.push_back(c);
            ++i;
            continue;
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

namespace {

void append_block(std::vector<double>& v, const std::optional<std::string>& token) {
    v.push_back(-1.0);
    size_t filled = 0;
    if (token) {
        auto cps = utf8_code_points(*token);
        for (size_t i = 0; i < cps.size() && i < kTokenSlots; ++i) {
            v.push_back(static_cast<double>(cps[i]));
            ++filled;
        }
    }
    for (; filled < kTokenSlots; ++filled) v.push_back(0.0);
}

}  // namespace

std::vector<double> encode_token_window(const std::optional<std::string>& prev,
                                        const std::string& target,
                                        const std::optional<std::string>& next) {
    std::vector<double> v;
    v.reserve(kWindowVectorLen);
    append_block(v, prev);
    append_block(v, target);
    append_block(v, next);
    v.push_back(-1.0);
    return v;
}

TokenLabel label_token(const std::string& before, const std::string& after) {
    if (after == "<self>" || after == "sil" || after == before) return TokenLabel::RemainSame;
    return TokenLabel::ToBeNormalized;
}

}  // namespace memnorm
