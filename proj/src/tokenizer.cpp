#include "glam/encoders.hpp"
#include "glam/report.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

namespace glam {

const Tokenizer& Tokenizer::standard()
{
    static const Tokenizer tokenizer = [] {
        std::set<std::string> words;
        for (const auto& sentence : all_template_sentences()) {
            for (auto& w : split(sentence)) {
                words.insert(w);
            }
        }
        for (const auto& [from, to] : template_table().synonyms) {
            for (auto& w : split(to)) {
                words.insert(w);
            }
        }
        return Tokenizer(std::vector<std::string>(words.begin(), words.end()));
    }();
    return tokenizer;
}

Tokenizer::Tokenizer(std::vector<std::string> words)
{
    words_ = {"[unk]", "[cls]"};
    for (auto& w : words) {
        if (ids_.count(w) == 0 && w != words_[0] && w != words_[1]) {
            words_.push_back(std::move(w));
        }
    }
    for (std::size_t i = 0; i < words_.size(); ++i) {
        ids_.emplace(words_[i], static_cast<int>(i));
    }
}

std::vector<std::string> Tokenizer::split(std::string_view text)
{
    std::string cleaned(text);
    for (char& ch : cleaned) {
        const auto u = static_cast<unsigned char>(ch);
        ch = std::isalnum(u) ? static_cast<char>(std::tolower(u)) : ' ';
    }
    std::istringstream in(cleaned);
    std::vector<std::string> out;
    std::string w;
    while (in >> w) {
        out.push_back(w);
    }
    return out;
}

std::vector<int> Tokenizer::encode(std::string_view text, int maxLength) const
{
    const auto words = split(text);
    if (words.empty()) {
        throw ContractError("encode_text: empty text");
    }
    std::vector<int> ids{kCls};
    for (const auto& w : words) {
        if (static_cast<int>(ids.size()) >= maxLength) {
            break;
        }
        auto it = ids_.find(w);
        ids.push_back(it == ids_.end() ? kUnk : it->second);
    }
    return ids;
}

int Tokenizer::unknownCount(std::string_view text) const
{
    int n = 0;
    for (const auto& w : split(text)) {
        n += ids_.count(w) == 0 ? 1 : 0;
    }
    return n;
}

}  // namespace glam
