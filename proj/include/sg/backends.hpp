#pragma once

#include <memory>
#include <string>

#include "sg/backend.hpp"
#include "sg/linear_backend.hpp"
#include "sg/tiny_transformer.hpp"

namespace sg {

// Builds a backend from its selection string:
//   linear-toy:<seed>[:vocab=<V>][:ctx=<N>]
//   tiny-transformer:<seed>[:ctx=<N>]
//   external:<adapter-spec>   (resolved through ExternalBackendRegistry)
inline BackendPtr make_backend(const std::string& spec) {
    const detail::BackendSpec parsed = detail::parse_backend_spec(spec);
    if (parsed.family == "linear-toy") {
        const auto vocab = static_cast<TokenId>(detail::option_u64(parsed, "vocab", 258));
        const auto ctx = static_cast<std::size_t>(detail::option_u64(parsed, "ctx", 64));
        return std::make_shared<LinearToyBackend>(parsed.seed, vocab, ctx);
    }
    if (parsed.family == "tiny-transformer") {
        const auto ctx = static_cast<std::size_t>(detail::option_u64(parsed, "ctx", 512));
        return std::make_shared<TinyTransformerBackend>(parsed.seed, ctx);
    }
    if (parsed.family == "external") {
        return ExternalBackendRegistry::instance().create(parsed.rest);
    }
    throw ConfigError("unknown backend family \"" + parsed.family + "\" in spec \"" + spec +
                      "\"");
}

} // namespace sg
