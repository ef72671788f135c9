#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "dmch/errors.hpp"

namespace dmch {

/// Token ↔ id bijection with dense ids. Ids 0..3 are reserved for the
/// sequence sentinels.
class Vocabulary {
public:
    static constexpr int kStart = 0;
    static constexpr int kEnd = 1;
    static constexpr int kPad = 2;
    static constexpr int kUnk = 3;

    Vocabulary() {
        for (const char* t : {"<start>", "<end>", "<pad>", "<unk>"}) add(t);
    }

    int add(const std::string& token) {
        auto it = ids_.find(token);
        if (it != ids_.end()) return it->second;
        int id = static_cast<int>(tokens_.size());
        ids_.emplace(token, id);
        tokens_.push_back(token);
        return id;
    }

    int id_of(const std::string& token) const {
        auto it = ids_.find(token);
        return it == ids_.end() ? kUnk : it->second;
    }

    bool contains(const std::string& token) const { return ids_.count(token) != 0; }

    const std::string& token_of(int id) const {
        if (id < 0 || id >= static_cast<int>(tokens_.size()))
            throw data_error("token id " + std::to_string(id) + " outside vocabulary of size " +
                             std::to_string(tokens_.size()));
        return tokens_[static_cast<std::size_t>(id)];
    }

    int size() const { return static_cast<int>(tokens_.size()); }

    std::vector<int> encode(const std::vector<std::string>& tokens) const {
        std::vector<int> out;
        out.reserve(tokens.size());
        for (const auto& t : tokens) {
            auto it = ids_.find(t);
            if (it == ids_.end()) throw data_error("token '" + t + "' not in vocabulary");
            out.push_back(it->second);
        }
        return out;
    }

    std::vector<std::string> decode(const std::vector<int>& ids) const {
        std::vector<std::string> out;
        out.reserve(ids.size());
        for (int id : ids) out.push_back(token_of(id));
        return out;
    }

private:
    std::unordered_map<std::string, int> ids_;
    std::vector<std::string> tokens_;
};

/// Ordered token ids with <start> prepended and <end> appended; payload is
/// the T tokens in between.
struct AttributeSequence {
    std::vector<int> ids; // includes sentinels

    static AttributeSequence from_payload(const std::vector<int>& payload) {
        if (payload.empty()) throw data_error("attribute sequence payload must be nonempty");
        AttributeSequence s;
        s.ids.reserve(payload.size() + 2);
        s.ids.push_back(Vocabulary::kStart);
        for (int id : payload) {
            if (id == Vocabulary::kPad) throw data_error("<pad> is not allowed inside an attribute sequence");
            s.ids.push_back(id);
        }
        s.ids.push_back(Vocabulary::kEnd);
        return s;
    }

    int length() const { return static_cast<int>(ids.size()) - 2; }

    std::vector<int> payload() const {
        return std::vector<int>(ids.begin() + 1, ids.end() - 1);
    }
};

} // namespace dmch
