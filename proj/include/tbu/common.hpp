#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace tbu {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Row id into a Dataset.
using RowIndex = std::size_t;
using IndexList = std::vector<RowIndex>;

// Error taxonomy. The CLI maps ConfigError/ParseError to exit code 2 and
// everything else to exit code 3.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

class BudgetError : public Error {
public:
    using Error::Error;
};

class IntegrityError : public Error {
public:
    using Error::Error;
};

/// splitmix64 finalizer; used to derive independent sub-seeds from one
/// experiment seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
    return mix_seed(mix_seed(base) ^ (tag * 0xd1342543de82ef95ULL + 1));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag1, std::uint64_t tag2) {
    return derive_seed(derive_seed(base, tag1), tag2);
}

/// Uniform double in [0, 1) from the top 53 bits of one 64-bit draw.
template <class Rng>
double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Index of the largest entry; ties go to the lowest index.
template <class Range>
std::size_t argmax(const Range& values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < static_cast<std::size_t>(values.size()); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

}  // namespace tbu
