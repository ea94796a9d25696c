// SPDX-License-Identifier: Apache-2.0
//
// cfmimo: downlink cell-free massive MIMO under probabilistic LoS/NLoS channels
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#ifndef CFMIMO_CORE_HPP
#define CFMIMO_CORE_HPP

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfmimo {

using cplx = std::complex<double>;

inline constexpr double speed_of_light = 299792458.0;
inline constexpr double pi = std::numbers::pi;

/// Thrown for any invalid scenario or experiment parameter.
class config_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major matrix. Only what the simulator needs: element access and
/// row views.
template <typename T>
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, const T& fill = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<T>& data() noexcept { return data_; }
    const std::vector<T>& data() const noexcept { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

using RealMatrix = Matrix<double>;
using ComplexMatrix = Matrix<cplx>;

/// Storage for one complex N-vector per (AP, UE) link, laid out as [m][k][n].
class LinkVectors {
public:
    LinkVectors() = default;
    LinkVectors(std::size_t aps, std::size_t ues, std::size_t antennas)
        : aps_(aps), ues_(ues), antennas_(antennas), data_(aps * ues * antennas) {}

    std::size_t aps() const noexcept { return aps_; }
    std::size_t ues() const noexcept { return ues_; }
    std::size_t antennas() const noexcept { return antennas_; }
    bool empty() const noexcept { return data_.empty(); }

    std::span<cplx> operator()(std::size_t m, std::size_t k)
    {
        return {data_.data() + (m * ues_ + k) * antennas_, antennas_};
    }
    std::span<const cplx> operator()(std::size_t m, std::size_t k) const
    {
        return {data_.data() + (m * ues_ + k) * antennas_, antennas_};
    }

    std::vector<cplx>& data() noexcept { return data_; }
    const std::vector<cplx>& data() const noexcept { return data_; }

    bool operator==(const LinkVectors&) const = default;

private:
    std::size_t aps_ = 0;
    std::size_t ues_ = 0;
    std::size_t antennas_ = 0;
    std::vector<cplx> data_;
};

/// Unconjugated bilinear form a^T b.
inline cplx dot_t(std::span<const cplx> a, std::span<const cplx> b)
{
    cplx s{};
    for (std::size_t n = 0; n < a.size(); ++n)
        s += a[n] * b[n];
    return s;
}

/// a^T conj(b), i.e. the inner product used throughout for zeta and gamma.
inline cplx dot_tc(std::span<const cplx> a, std::span<const cplx> b)
{
    cplx s{};
    for (std::size_t n = 0; n < a.size(); ++n)
        s += a[n] * std::conj(b[n]);
    return s;
}

inline double squared_norm(std::span<const cplx> a)
{
    double s = 0.0;
    for (const auto& v : a)
        s += std::norm(v);
    return s;
}

/// Neumaier-compensated accumulator.
template <typename T>
class CompensatedSum {
public:
    CompensatedSum& operator+=(T v)
    {
        const T t = sum_ + v;
        if (std::abs(sum_) >= std::abs(v))
            comp_ += (sum_ - t) + v;
        else
            comp_ += (v - t) + sum_;
        sum_ = t;
        return *this;
    }
    T value() const { return sum_ + comp_; }

private:
    T sum_{};
    T comp_{};
};

template <>
class CompensatedSum<cplx> {
public:
    CompensatedSum& operator+=(cplx v)
    {
        re_ += v.real();
        im_ += v.imag();
        return *this;
    }
    cplx value() const { return {re_.value(), im_.value()}; }

private:
    CompensatedSum<double> re_;
    CompensatedSum<double> im_;
};

/// Pairwise (cascade) summation; result depends only on the order of `values`.
inline double pairwise_sum(std::span<const double> values)
{
    if (values.size() <= 8) {
        double s = 0.0;
        for (double v : values)
            s += v;
        return s;
    }
    const std::size_t half = values.size() / 2;
    return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

/// Mean and standard error of the mean.
struct Estimate {
    double mean = 0.0;
    double stderr_ = 0.0;
};

inline Estimate mean_and_stderr(std::span<const double> values)
{
    Estimate e;
    const std::size_t n = values.size();
    if (n == 0)
        return e;
    e.mean = pairwise_sum(values) / static_cast<double>(n);
    if (n > 1) {
        std::vector<double> dev(n);
        for (std::size_t i = 0; i < n; ++i)
            dev[i] = (values[i] - e.mean) * (values[i] - e.mean);
        const double var = pairwise_sum(dev) / static_cast<double>(n - 1);
        e.stderr_ = std::sqrt(var / static_cast<double>(n));
    }
    return e;
}

// ------------------------------------------------------------------------
// Random streams

using Rng = std::mt19937_64;

/// Independent generator keyed by (seed, stream ids). The same key always
/// yields the same sequence, so work can be split across threads freely.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream_a = 0, std::uint64_t stream_b = 0,
                    std::uint64_t stream_c = 0)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream_a), static_cast<std::uint32_t>(stream_a >> 32),
                      static_cast<std::uint32_t>(stream_b), static_cast<std::uint32_t>(stream_b >> 32),
                      static_cast<std::uint32_t>(stream_c), static_cast<std::uint32_t>(stream_c >> 32)};
    return Rng(seq);
}

/// Circularly-symmetric complex Gaussian with E|z|^2 = 1.
inline cplx complex_normal(Rng& rng)
{
    std::normal_distribution<double> g(0.0, std::sqrt(0.5));
    const double re = g(rng);
    const double im = g(rng);
    return {re, im};
}

inline void fill_complex_normal(std::span<cplx> out, Rng& rng)
{
    std::normal_distribution<double> g(0.0, std::sqrt(0.5));
    for (auto& v : out) {
        const double re = g(rng);
        const double im = g(rng);
        v = {re, im};
    }
}

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double lin) { return 10.0 * std::log10(lin); }

} // namespace cfmimo

#endif // CFMIMO_CORE_HPP
