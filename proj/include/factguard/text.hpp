#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "factguard/errors.hpp"

namespace factguard {

// Decodes the next UTF-8 code point starting at s[i], advancing i. Invalid
// bytes are passed through one at a time so malformed input degrades to
// per-byte tokens instead of throwing.
inline char32_t next_codepoint(std::string_view s, std::size_t& i) {
    const unsigned char b0 = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    char32_t cp = b0;
    if (b0 >= 0xF0)
        len = 4, cp = b0 & 0x07;
    else if (b0 >= 0xE0)
        len = 3, cp = b0 & 0x0F;
    else if (b0 >= 0xC0)
        len = 2, cp = b0 & 0x1F;
    if (len > 1) {
        if (i + len > s.size()) {
            ++i;
            return b0;
        }
        for (std::size_t k = 1; k < len; ++k) {
            const unsigned char bk = static_cast<unsigned char>(s[i + k]);
            if ((bk & 0xC0) != 0x80) {
                ++i;
                return b0;
            }
            cp = (cp << 6) | (bk & 0x3F);
        }
    }
    i += len;
    return cp;
}

inline bool is_space_cp(char32_t cp) {
    return cp == U' ' || cp == U'\t' || cp == U'\n' || cp == U'\r' || cp == U'\f' ||
           cp == U'\v' || cp == 0x3000 || cp == 0x00A0;
}

// Treats the common CJK blocks (ideographs, kana, CJK punctuation, fullwidth
// forms) as character-per-token script.
inline bool is_cjk_cp(char32_t cp) {
    return (cp >= 0x3000 && cp <= 0x30FF) || (cp >= 0x3400 && cp <= 0x4DBF) ||
           (cp >= 0x4E00 && cp <= 0x9FFF) || (cp >= 0xF900 && cp <= 0xFAFF) ||
           (cp >= 0xFF00 && cp <= 0xFFEF);
}

// Lowercases ASCII, splits on whitespace, and emits every CJK character as
// its own token. Input is assumed to already be in a composed normal form;
// no Unicode normalization is attempted here.
inline std::vector<std::string> split_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            out.push_back(current);
            current.clear();
        }
    };
    std::size_t i = 0;
    while (i < text.size()) {
        const std::size_t start = i;
        char32_t cp = next_codepoint(text, i);
        if (is_space_cp(cp)) {
            flush();
            continue;
        }
        if (is_cjk_cp(cp)) {
            flush();
            out.emplace_back(text.substr(start, i - start));
            continue;
        }
        if (cp < 0x80) {
            char c = static_cast<char>(cp);
            if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
            current.push_back(c);
        } else {
            current.append(text.substr(start, i - start));
        }
    }
    flush();
    return out;
}

struct TokenSequence {
    std::vector<std::size_t> ids;
    std::size_t length() const { return ids.size(); }
};

class Vocabulary {
public:
    static constexpr std::size_t kPad = 0;
    static constexpr std::size_t kUnk = 1;
    static constexpr std::size_t kCls = 2;
    static constexpr std::size_t kSpecialCount = 3;

    Vocabulary() : tokens_{"[PAD]", "[UNK]", "[CLS]"} { rebuild_index(); }

    explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
        if (tokens_.size() < kSpecialCount || tokens_[kPad] != "[PAD]" ||
            tokens_[kUnk] != "[UNK]" || tokens_[kCls] != "[CLS]")
            throw ArgumentError("vocabulary must start with [PAD], [UNK], [CLS]");
        rebuild_index();
    }

    // Keeps the most frequent corpus tokens after the three specials, with
    // frequency ties broken lexicographically.
    static Vocabulary build(const std::vector<std::string>& corpus, std::size_t max_size) {
        if (corpus.empty()) throw ArgumentError("cannot build a vocabulary from an empty corpus");
        if (max_size < kSpecialCount)
            throw ArgumentError("vocabulary budget " + std::to_string(max_size) +
                                " cannot fit the " + std::to_string(kSpecialCount) +
                                " special tokens");
        std::map<std::string, std::uint64_t> freq;
        for (const std::string& text : corpus)
            for (std::string& tok : split_tokens(text)) ++freq[std::move(tok)];

        std::vector<std::pair<std::string, std::uint64_t>> ranked(freq.begin(), freq.end());
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });

        std::vector<std::string> tokens{"[PAD]", "[UNK]", "[CLS]"};
        const std::size_t budget = max_size - kSpecialCount;
        for (std::size_t i = 0; i < ranked.size() && i < budget; ++i)
            tokens.push_back(ranked[i].first);
        return Vocabulary(std::move(tokens));
    }

    std::size_t size() const { return tokens_.size(); }

    std::size_t id_or_unk(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? kUnk : it->second;
    }

    bool contains(const std::string& token) const { return index_.count(token) > 0; }

    const std::vector<std::string>& tokens() const { return tokens_; }

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

private:
    void rebuild_index() {
        index_.clear();
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            if (!index_.emplace(tokens_[i], i).second)
                throw ArgumentError("duplicate vocabulary token '" + tokens_[i] + "'");
        }
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Start token, then the mapped words, truncated to max_len ids in total.
// Text that normalizes to nothing yields the start token alone.
inline TokenSequence tokenize(std::string_view text, const Vocabulary& vocab,
                              std::size_t max_len) {
    if (max_len < 1) throw ArgumentError("max_len must be at least 1");
    TokenSequence seq;
    seq.ids.push_back(Vocabulary::kCls);
    for (const std::string& tok : split_tokens(text)) {
        if (seq.ids.size() >= max_len) break;
        seq.ids.push_back(vocab.id_or_unk(tok));
    }
    return seq;
}

} // namespace factguard
