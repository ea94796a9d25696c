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

#ifndef CFMIMO_PRECODER_HPP
#define CFMIMO_PRECODER_HPP

#include "estimation.hpp"

#include <array>
#include <charconv>
#include <ostream>
#include <string_view>

namespace cfmimo {

/// Conjugate beamforming variants.
///  - AccurateCSI:       p_mk = x_mk conj(h_mk)
///  - EstimatedCSI:      p_mk = x_mk conj(alpha_mk losvec_mk + sqrt(beta_mk) nlos_est_mk)
///  - StatisticalNoDL,
///    StatisticalWithDL: p_mk = x_mk alpha_mk conj(losvec_mk)
enum class Scheme { AccurateCSI, EstimatedCSI, StatisticalNoDL, StatisticalWithDL };

inline constexpr std::array<Scheme, 4> all_schemes{Scheme::AccurateCSI, Scheme::EstimatedCSI,
                                                   Scheme::StatisticalNoDL, Scheme::StatisticalWithDL};

inline std::string_view to_string(Scheme s)
{
    switch (s) {
    case Scheme::AccurateCSI: return "accurate_csi";
    case Scheme::EstimatedCSI: return "estimated_csi";
    case Scheme::StatisticalNoDL: return "statistical_no_dl";
    case Scheme::StatisticalWithDL: return "statistical_with_dl";
    }
    return "?";
}

inline Scheme parse_scheme(std::string_view s)
{
    for (Scheme v : all_schemes)
        if (to_string(v) == s)
            return v;
    throw config_error("unknown scheme '" + std::string(s) + "'");
}

inline bool is_statistical(Scheme s) { return s == Scheme::StatisticalNoDL || s == Scheme::StatisticalWithDL; }

/// PerAP fixes E||y_m||^2 for every AP; PerUE fixes sum_m E||y_mk||^2 for every UE.
enum class PowerControlMode { PerAP, PerUE };

inline std::string_view to_string(PowerControlMode p) { return p == PowerControlMode::PerAP ? "per_ap" : "per_ue"; }

inline PowerControlMode parse_power_mode(std::string_view s)
{
    if (s == "per_ap") return PowerControlMode::PerAP;
    if (s == "per_ue") return PowerControlMode::PerUE;
    throw config_error("unknown power mode '" + std::string(s) + "'");
}

/// How the budget of one constraint group is divided among its active streams.
///  - EqualPower: every active stream gets the same expected power.
///  - EqualCoefficient: every active stream gets the same x, so expected
///    power follows the stream's channel strength.
enum class PowerSplit { EqualPower, EqualCoefficient };

inline std::string_view to_string(PowerSplit p)
{
    return p == PowerSplit::EqualPower ? "equal_power" : "equal_coefficient";
}

inline PowerSplit parse_power_split(std::string_view s)
{
    if (s == "equal_power") return PowerSplit::EqualPower;
    if (s == "equal_coefficient") return PowerSplit::EqualCoefficient;
    throw config_error("unknown power split '" + std::string(s) + "'");
}

/// Expected squared norm of the unscaled beamformer column, E||p_mk||^2 / x_mk^2.
inline double expected_stream_power(Scheme scheme, const LinkStatistics& stats, double sigma_u2, std::size_t m,
                                    std::size_t k)
{
    const double los = stats.q(m, k) * stats.zeta_self(m, k);
    const double beta = stats.beta(m, k);
    const double n = static_cast<double>(stats.antennas());
    switch (scheme) {
    case Scheme::AccurateCSI: return los + n * beta;
    case Scheme::EstimatedCSI: {
        const double denom = beta + sigma_u2;
        return los + (denom > 0.0 ? n * beta * beta / denom : 0.0);
    }
    case Scheme::StatisticalNoDL:
    case Scheme::StatisticalWithDL: return los;
    }
    return 0.0;
}

struct PowerAllocation {
    RealMatrix x;                          // M x K, non-negative
    std::vector<std::size_t> silent_aps;   // APs with an all-zero row
    std::vector<std::string> warnings;     // constraint groups that got no power
    double radiated_power = 0.0;           // sum_m E||y_m||^2
};

/// Splits `budget` inside every constraint group (one per AP for PerAP, one
/// per UE for PerUE) so that the group's expected power equals the budget
/// exactly. Groups without a usable stream get zeros and a warning.
inline PowerAllocation solve_power(PowerControlMode mode, Scheme scheme, const LinkStatistics& stats, double sigma_u2,
                                   double budget, PowerSplit split = PowerSplit::EqualPower)
{
    if (!(budget > 0.0))
        throw std::invalid_argument("power budget must be positive");
    const std::size_t M = stats.num_aps();
    const std::size_t K = stats.num_ues();
    RealMatrix s(M, K);
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t k = 0; k < K; ++k)
            s(m, k) = expected_stream_power(scheme, stats, sigma_u2, m, k);

    PowerAllocation a;
    a.x = RealMatrix(M, K);

    // Fills one group given accessors over its members.
    auto fill_group = [&](std::size_t size, auto&& power_of, auto&& x_of, const std::string& label) {
        std::size_t active = 0;
        double total = 0.0;
        for (std::size_t j = 0; j < size; ++j) {
            if (power_of(j) > 0.0) {
                ++active;
                total += power_of(j);
            }
        }
        if (active == 0) {
            a.warnings.push_back(label + ": no usable stream, allocated zero power");
            return;
        }
        for (std::size_t j = 0; j < size; ++j) {
            const double p = power_of(j);
            if (p <= 0.0)
                continue;
            x_of(j) = split == PowerSplit::EqualPower ? std::sqrt(budget / (static_cast<double>(active) * p))
                                                      : std::sqrt(budget / total);
        }
    };

    if (mode == PowerControlMode::PerAP) {
        for (std::size_t m = 0; m < M; ++m)
            fill_group(
                K, [&](std::size_t k) { return s(m, k); }, [&](std::size_t k) -> double& { return a.x(m, k); },
                "AP " + std::to_string(m));
    } else {
        for (std::size_t k = 0; k < K; ++k)
            fill_group(
                M, [&](std::size_t m) { return s(m, k); }, [&](std::size_t m) -> double& { return a.x(m, k); },
                "UE " + std::to_string(k));
    }

    for (std::size_t m = 0; m < M; ++m) {
        bool silent = true;
        for (std::size_t k = 0; k < K; ++k) {
            a.radiated_power += a.x(m, k) * a.x(m, k) * s(m, k);
            silent = silent && a.x(m, k) == 0.0;
        }
        if (silent)
            a.silent_aps.push_back(m);
    }
    return a;
}

/// Allocation matrix as CSV: one row per AP, one column per UE.
inline void write_allocation_csv(std::ostream& out, const PowerAllocation& a)
{
    out << "ap";
    for (std::size_t k = 0; k < a.x.cols(); ++k)
        out << ",ue" << k;
    out << '\n';
    char buf[64];
    for (std::size_t m = 0; m < a.x.rows(); ++m) {
        out << m;
        for (std::size_t k = 0; k < a.x.cols(); ++k) {
            const auto res = std::to_chars(buf, buf + sizeof buf, a.x(m, k));
            out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
        }
        out << '\n';
    }
}

// ------------------------------------------------------------------------
// Precoders and effective channels

/// Columns p_mk of every AP's precoder, stored per link.
struct PrecoderSet {
    LinkVectors columns;
};

inline PrecoderSet build_precoders(Scheme scheme, const ChannelRealization& r, const LinkStatistics& stats,
                                   const PowerAllocation& alloc)
{
    if (scheme == Scheme::EstimatedCSI && !r.has_estimates())
        throw std::invalid_argument("estimated-CSI precoding needs uplink estimates");
    const std::size_t M = stats.num_aps();
    const std::size_t K = stats.num_ues();
    const std::size_t N = stats.antennas();
    PrecoderSet p{LinkVectors(M, K, N)};
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t k = 0; k < K; ++k) {
            const double x = alloc.x(m, k);
            auto col = p.columns(m, k);
            if (x == 0.0)
                continue;
            const auto los = stats.los_vec(m, k);
            const double a = r.alpha(m, k);
            const double sb = std::sqrt(stats.beta(m, k));
            switch (scheme) {
            case Scheme::AccurateCSI: {
                const auto nl = r.nlos(m, k);
                for (std::size_t n = 0; n < N; ++n)
                    col[n] = x * std::conj(a * los[n] + sb * nl[n]);
                break;
            }
            case Scheme::EstimatedCSI: {
                const auto est = r.est_nlos(m, k);
                for (std::size_t n = 0; n < N; ++n)
                    col[n] = x * std::conj(a * los[n] + sb * est[n]);
                break;
            }
            case Scheme::StatisticalNoDL:
            case Scheme::StatisticalWithDL:
                for (std::size_t n = 0; n < N; ++n)
                    col[n] = x * a * std::conj(los[n]);
                break;
            }
        }
    }
    return p;
}

struct EffectiveChannels {
    ComplexMatrix gamma;          // K x K, gamma(k, i) = sum_m h_mk^T p_mi
    std::vector<cplx> gamma_dot;  // slow-fading part of gamma_kk known at UE k
    std::vector<cplx> gamma_bar;  // gamma_kk - gamma_dot_kk
};

inline EffectiveChannels effective_channels(const ChannelRealization& r, const LinkStatistics& stats,
                                            const PrecoderSet& p, const PowerAllocation& alloc)
{
    const std::size_t M = stats.num_aps();
    const std::size_t K = stats.num_ues();
    const std::size_t N = stats.antennas();
    EffectiveChannels e;
    e.gamma = ComplexMatrix(K, K);
    e.gamma_dot.assign(K, cplx{});
    e.gamma_bar.assign(K, cplx{});
    std::vector<cplx> h(N);
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t k = 0; k < K; ++k) {
            const auto los = stats.los_vec(m, k);
            const auto nl = r.nlos(m, k);
            const double a = r.alpha(m, k);
            const double sb = std::sqrt(stats.beta(m, k));
            for (std::size_t n = 0; n < N; ++n)
                h[n] = a * los[n] + sb * nl[n];
            for (std::size_t i = 0; i < K; ++i)
                if (alloc.x(m, i) != 0.0)
                    e.gamma(k, i) += dot_t(h, p.columns(m, i));
            e.gamma_dot[k] += alloc.x(m, k) * a * stats.zeta_self(m, k);
        }
    }
    for (std::size_t k = 0; k < K; ++k)
        e.gamma_bar[k] = e.gamma(k, k) - e.gamma_dot[k];
    return e;
}

} // namespace cfmimo

#endif // CFMIMO_PRECODER_HPP
