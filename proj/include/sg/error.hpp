#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace sg {

// Failure domains; the CLI maps these to exit codes (config=2, data=3,
// backend=4, schema errors count as data).
enum class ErrorKind { Config, Data, Backend, Schema };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string message)
        : std::runtime_error(std::move(message)), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct ConfigError : Error {
    explicit ConfigError(std::string m) : Error(ErrorKind::Config, std::move(m)) {}
};

struct EmptyInput : Error {
    explicit EmptyInput(std::string m) : Error(ErrorKind::Data, std::move(m)) {}
};

struct UnrepresentableText : Error {
    explicit UnrepresentableText(std::string m) : Error(ErrorKind::Data, std::move(m)) {}
};

struct InvalidTokenId : Error {
    explicit InvalidTokenId(std::string m) : Error(ErrorKind::Data, std::move(m)) {}
};

struct ContextOverflow : Error {
    explicit ContextOverflow(std::string m) : Error(ErrorKind::Backend, std::move(m)) {}
};

struct NonFiniteGradient : Error {
    explicit NonFiniteGradient(std::string m) : Error(ErrorKind::Backend, std::move(m)) {}
};

// Raised by candidate providers that cannot rank against a degenerate
// (zero-norm) embedding row. The bundled embedding-NN provider handles the
// degenerate case itself and does not throw this.
struct ZeroNormEmbedding : Error {
    explicit ZeroNormEmbedding(std::string m) : Error(ErrorKind::Backend, std::move(m)) {}
};

struct EmptyCandidateSet : Error {
    explicit EmptyCandidateSet(std::string m) : Error(ErrorKind::Backend, std::move(m)) {}
};

struct VocabularyMismatch : Error {
    explicit VocabularyMismatch(std::string m) : Error(ErrorKind::Backend, std::move(m)) {}
};

struct EmptyText : Error {
    explicit EmptyText(std::string m) : Error(ErrorKind::Data, std::move(m)) {}
};

struct EmptyOriginal : Error {
    explicit EmptyOriginal(std::string m) : Error(ErrorKind::Data, std::move(m)) {}
};

struct ZeroVectorEmbedding : Error {
    explicit ZeroVectorEmbedding(std::string m) : Error(ErrorKind::Backend, std::move(m)) {}
};

struct ParseError : Error {
    ParseError(int line, std::string m)
        : Error(ErrorKind::Data, "line " + std::to_string(line) + ": " + std::move(m)),
          line_number(line) {}

    int line_number;
};

struct DuplicateId : Error {
    explicit DuplicateId(std::string m) : Error(ErrorKind::Data, std::move(m)) {}
};

struct SchemaError : Error {
    explicit SchemaError(std::string m) : Error(ErrorKind::Schema, std::move(m)) {}
};

inline int exit_code_for(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Config: return 2;
        case ErrorKind::Data: return 3;
        case ErrorKind::Schema: return 3;
        case ErrorKind::Backend: return 4;
    }
    return 1;
}

} // namespace sg
