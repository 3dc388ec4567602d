// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "rlfseg/errors.hpp"
#include "rlfseg/tensor.hpp"

namespace rlfseg {

inline constexpr int kMaxPromptTokens = 16;
inline constexpr const char* kUnkToken = "<unk>";

/// Closed token vocabulary. Id 0 is always the unknown token.
class Vocabulary {
public:
    Vocabulary() : tokens_{kUnkToken} { index_[kUnkToken] = 0; }

    explicit Vocabulary(const std::vector<std::string>& words) : Vocabulary() {
        for (const auto& w : words) add(w);
    }

    int add(const std::string& w) {
        if (auto it = index_.find(w); it != index_.end()) return it->second;
        const int id = static_cast<int>(tokens_.size());
        tokens_.push_back(w);
        index_[w] = id;
        return id;
    }

    int id(const std::string& w) const {
        auto it = index_.find(w);
        return it == index_.end() ? 0 : it->second;
    }
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    int size() const { return static_cast<int>(tokens_.size()); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    /// One token per line, unknown token first.
    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw DataError("cannot write vocabulary: " + path);
        for (const auto& t : tokens_) out << t << '\n';
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot read vocabulary: " + path);
        std::string line;
        std::vector<std::string> words;
        while (std::getline(in, line))
            if (!line.empty()) words.push_back(line);
        if (words.empty() || words.front() != kUnkToken) throw DataError("vocabulary file malformed: " + path);
        return Vocabulary({words.begin() + 1, words.end()});
    }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

struct PromptText {
    std::vector<std::string> words;
    std::vector<int> ids;
};

inline PromptText tokenize_prompt(const std::string& text, const Vocabulary& vocab) {
    PromptText out;
    std::istringstream is(text);
    std::string w;
    while (is >> w) {
        std::transform(w.begin(), w.end(), w.begin(), [](unsigned char ch) { return std::tolower(ch); });
        const int id = vocab.id(w);
        out.words.push_back(id == 0 ? kUnkToken : w);
        out.ids.push_back(id);
    }
    if (out.ids.empty()) throw InvalidArgument("tokenize_prompt: empty prompt");
    if (out.ids.size() > static_cast<std::size_t>(kMaxPromptTokens))
        throw InvalidArgument("tokenize_prompt: prompt longer than " + std::to_string(kMaxPromptTokens) + " tokens");
    return out;
}

/// Mean of the table rows selected by `ids`. table is [V, D].
template <class T>
std::vector<T> embed_prompt(std::span<const int> ids, const Tensor<T>& table) {
    require(table.rank() == 2, "embed_prompt: table must be [V,D]");
    require(!ids.empty(), "embed_prompt: no tokens");
    const int v = table.dim(0), d = table.dim(1);
    std::vector<T> out(static_cast<std::size_t>(d), T(0));
    for (int id : ids) {
        require(id >= 0 && id < v, "embed_prompt: token id out of range");
        for (int k = 0; k < d; ++k) out[k] += table[static_cast<std::size_t>(id) * d + k];
    }
    const T inv = T(1) / static_cast<T>(ids.size());
    for (auto& x : out) x *= inv;
    return out;
}

/// Accumulates d(loss)/d(table) given d(loss)/d(embedding).
template <class T>
void embed_prompt_backward(std::span<const int> ids, std::span<const T> grad_embedding, Tensor<T>& grad_table) {
    const int d = grad_table.dim(1);
    const T inv = T(1) / static_cast<T>(ids.size());
    for (int id : ids)
        for (int k = 0; k < d; ++k) grad_table[static_cast<std::size_t>(id) * d + k] += grad_embedding[k] * inv;
}

} // namespace rlfseg
