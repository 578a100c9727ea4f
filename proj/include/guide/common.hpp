#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <stdexcept>
#include <string>
#include <system_error>

namespace guide {

// Samples are rows everywhere; row-major keeps file payloads contiguous.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

enum class ErrorCode {
    // file format / io
    BadMagic,
    TruncatedPayload,
    UnknownDtype,
    TrailingBytes,
    IoError,
    // data contracts
    NonFiniteValue,
    RowCountMismatch,
    UnknownClassLabel,
    MalformedCsv,
    MissingDomainLabels,
    EmptySplit,
    // clustering
    TooFewSamples,
    NonFiniteInput,
    // shape contracts
    DimensionMismatch,
    WidthMismatch,
    LengthMismatch,
    // transform
    EmptyCluster,
    DegenerateSupports,
    SingularKernel,
    // training
    DivergedLoss,
    // configuration
    ConfigError,
};

inline const char* error_code_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::TruncatedPayload: return "TruncatedPayload";
        case ErrorCode::UnknownDtype: return "UnknownDtype";
        case ErrorCode::TrailingBytes: return "TrailingBytes";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::NonFiniteValue: return "NonFiniteValue";
        case ErrorCode::RowCountMismatch: return "RowCountMismatch";
        case ErrorCode::UnknownClassLabel: return "UnknownClassLabel";
        case ErrorCode::MalformedCsv: return "MalformedCsv";
        case ErrorCode::MissingDomainLabels: return "MissingDomainLabels";
        case ErrorCode::EmptySplit: return "EmptySplit";
        case ErrorCode::TooFewSamples: return "TooFewSamples";
        case ErrorCode::NonFiniteInput: return "NonFiniteInput";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::WidthMismatch: return "WidthMismatch";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::EmptyCluster: return "EmptyCluster";
        case ErrorCode::DegenerateSupports: return "DegenerateSupports";
        case ErrorCode::SingularKernel: return "SingularKernel";
        case ErrorCode::DivergedLoss: return "DivergedLoss";
        case ErrorCode::ConfigError: return "ConfigError";
    }
    return "UnknownError";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + msg), code_(code) {}

    ErrorCode code() const { return code_; }

    // Process exit code convention: 2 usage/config, 3 I/O, 4 numerical failure.
    int exit_code() const {
        switch (code_) {
            case ErrorCode::BadMagic:
            case ErrorCode::TruncatedPayload:
            case ErrorCode::UnknownDtype:
            case ErrorCode::TrailingBytes:
            case ErrorCode::IoError:
                return 3;
            case ErrorCode::SingularKernel:
            case ErrorCode::DivergedLoss:
                return 4;
            default:
                return 2;
        }
    }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, ErrorCode code, const std::string& msg) {
    if (!cond) fail(code, msg);
}

// Shortest round-trip decimal representation; used in every text format so
// re-emission is byte-stable and values reload exactly.
inline std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, const std::string& what) {
    double v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    require(res.ec == std::errc() && res.ptr == s.data() + s.size(), ErrorCode::ConfigError,
            "cannot parse '" + s + "' as a real number for " + what);
    return v;
}

inline long long parse_int(const std::string& s, const std::string& what) {
    long long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    require(res.ec == std::errc() && res.ptr == s.data() + s.size(), ErrorCode::ConfigError,
            "cannot parse '" + s + "' as an integer for " + what);
    return v;
}

}  // namespace guide
