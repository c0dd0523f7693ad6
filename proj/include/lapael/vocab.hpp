#ifndef LAPAEL_VOCAB_HPP
#define LAPAEL_VOCAB_HPP

// Word-level vocabulary. Corpus text is pre-tokenized (space-separated words,
// punctuation standing alone), so encoding is a whitespace split plus lookup.
// Ids: five specials first, then all words in lexicographic order.

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace lapael {

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kEos = 1;
    static constexpr int kUnk = 2;
    static constexpr int kQMark = 3; // the "Q:" marker
    static constexpr int kAMark = 4; // the "A:" marker

    static const std::vector<std::string>& specials() {
        static const std::vector<std::string> s{"<pad>", "<eos>", "<unk>", "Q:", "A:"};
        return s;
    }

    Vocabulary() = default;

    static Vocabulary from_tokens(std::vector<std::string> tokens) {
        Vocabulary v;
        v.tokens_ = std::move(tokens);
        for (std::size_t i = 0; i < v.tokens_.size(); ++i)
            v.index_[v.tokens_[i]] = static_cast<int>(i);
        if (v.tokens_.size() < specials().size())
            throw std::invalid_argument("vocabulary: missing specials");
        for (std::size_t i = 0; i < specials().size(); ++i)
            if (v.tokens_[i] != specials()[i])
                throw std::invalid_argument("vocabulary: specials out of order");
        return v;
    }

    int size() const { return static_cast<int>(tokens_.size()); }

    int id(const std::string& word) const {
        auto it = index_.find(word);
        return it == index_.end() ? kUnk : it->second;
    }
    bool contains(const std::string& word) const { return index_.count(word) > 0; }
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

    static std::vector<std::string> split_words(const std::string& text) {
        std::vector<std::string> out;
        std::istringstream ss(text);
        std::string w;
        while (ss >> w) out.push_back(w);
        return out;
    }

    std::vector<int> encode(const std::string& text) const {
        std::vector<int> out;
        for (const auto& w : split_words(text)) out.push_back(id(w));
        return out;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (int id : ids) {
            if (id == kEos || id == kPad) continue;
            if (!out.empty()) out += ' ';
            out += token(id);
        }
        return out;
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("vocabulary: cannot write " + path);
        for (const auto& t : tokens_) f << t << '\n';
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("vocabulary: cannot read " + path);
        std::vector<std::string> tokens;
        std::string line;
        while (std::getline(f, line)) tokens.push_back(line);
        return from_tokens(std::move(tokens));
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

} // namespace lapael

#endif
