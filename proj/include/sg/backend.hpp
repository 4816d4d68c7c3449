#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "sg/error.hpp"
#include "sg/linalg.hpp"
#include "sg/vocab.hpp"

namespace sg {

// Loss together with the one-hot gradient matrix h. h has one row per
// sequence position and one column per vocabulary entry; h[i][j] is the
// NEGATIVE gradient of the loss with respect to coordinate j of position i's
// one-hot indicator, so larger h means "substituting token j here lowers the
// loss more" under the local linear model.
struct LossAndGradient {
    double loss = 0.0;
    Mat h;
};

// Uniform contract over autoregressive language models. Implementations must
// be immutable after construction; all member functions are safe to call
// concurrently.
class Backend {
public:
    virtual ~Backend() = default;

    virtual const Vocabulary& vocabulary() const = 0;

    // Canonical selection string, echoed into result provenance.
    virtual std::string id() const = 0;

    virtual std::size_t context_limit() const = 0;

    virtual TokenSequence encode(std::string_view text) const = 0;
    virtual std::string decode(const TokenSequence& seq) const = 0;

    // Unnormalized next-token scores after the full sequence.
    virtual Vec next_token_logits(const TokenSequence& seq) const = 0;

    // Cross-entropy of the next-token distribution against the target token,
    // plus the one-hot gradient defined above. For models whose first layer
    // is a lookup e_i = v_i * M_e the gradient is taken at the one-hot layer
    // via the chain rule through M_e.
    virtual LossAndGradient loss_and_onehot_gradient(const TokenSequence& seq,
                                                     TokenId target_id) const = 0;

    // Token embedding lookup table, V x d. Stable across calls.
    virtual const Mat& embedding_table() const = 0;

    TokenId vocab_size() const { return vocabulary().size(); }
    TokenId end_token_id() const { return vocabulary().end_token_id; }

protected:
    void check_sequence(const TokenSequence& seq) const {
        if (seq.empty()) throw EmptyInput("backend needs at least one token");
        if (seq.size() > context_limit())
            throw ContextOverflow("sequence length " + std::to_string(seq.size()) +
                                  " exceeds context limit " + std::to_string(context_limit()));
        const TokenId v = vocab_size();
        for (TokenId id : seq.ids)
            if (id < 0 || id >= v)
                throw InvalidTokenId("token id " + std::to_string(id) + " out of range [0, " +
                                     std::to_string(v) + ")");
    }

    void check_target(TokenId target_id) const {
        if (target_id < 0 || target_id >= vocab_size())
            throw InvalidTokenId("target id " + std::to_string(target_id) + " out of range");
    }
};

using BackendPtr = std::shared_ptr<const Backend>;

// Factory for "external:<adapter-spec>" backends. Applications embedding the
// library register adapters here; the core ships none.
class ExternalBackendRegistry {
public:
    using Factory = std::function<BackendPtr(const std::string& adapter_spec)>;

    static ExternalBackendRegistry& instance() {
        static ExternalBackendRegistry reg;
        return reg;
    }

    void register_adapter(const std::string& name, Factory factory) {
        std::lock_guard lock(mutex_);
        factories_[name] = std::move(factory);
    }

    BackendPtr create(const std::string& adapter_spec) const {
        const auto colon = adapter_spec.find(':');
        const std::string name = adapter_spec.substr(0, colon);
        Factory factory;
        {
            std::lock_guard lock(mutex_);
            const auto it = factories_.find(name);
            if (it == factories_.end())
                throw ConfigError("no external backend adapter registered under \"" + name +
                                  "\"");
            factory = it->second;
        }
        return factory(adapter_spec);
    }

private:
    mutable std::mutex mutex_;
    std::map<std::string, Factory> factories_;
};

namespace detail {

struct BackendSpec {
    std::string family;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> options;
    std::string rest; // everything after "family:" for external specs
};

inline BackendSpec parse_backend_spec(const std::string& spec) {
    BackendSpec out;
    const auto first = spec.find(':');
    out.family = spec.substr(0, first);
    if (out.family.empty()) throw ConfigError("empty backend spec");
    if (first == std::string::npos) {
        if (out.family != "external") return out;
        throw ConfigError("external backend spec needs an adapter name");
    }
    out.rest = spec.substr(first + 1);
    if (out.family == "external") {
        if (out.rest.empty()) throw ConfigError("external backend spec needs an adapter name");
        return out;
    }
    // toy specs: family:<seed>[:key=value]...
    std::string remainder = out.rest;
    std::size_t pos = 0;
    int field = 0;
    while (pos <= remainder.size()) {
        const auto next = remainder.find(':', pos);
        const std::string part =
            remainder.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
        if (field == 0) {
            try {
                out.seed = std::stoull(part);
            } catch (const std::exception&) {
                throw ConfigError("backend spec \"" + spec + "\": seed must be an integer");
            }
        } else {
            const auto eq = part.find('=');
            if (eq == std::string::npos)
                throw ConfigError("backend spec \"" + spec + "\": expected key=value, got \"" +
                                  part + "\"");
            out.options[part.substr(0, eq)] = part.substr(eq + 1);
        }
        ++field;
        if (next == std::string::npos) break;
        pos = next + 1;
    }
    return out;
}

inline std::uint64_t option_u64(const detail::BackendSpec& spec, const std::string& key,
                                std::uint64_t fallback) {
    const auto it = spec.options.find(key);
    if (it == spec.options.end()) return fallback;
    try {
        return std::stoull(it->second);
    } catch (const std::exception&) {
        throw ConfigError("backend option " + key + " must be an integer, got \"" + it->second +
                          "\"");
    }
}

} // namespace detail

} // namespace sg
