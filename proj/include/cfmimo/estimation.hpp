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

#ifndef CFMIMO_ESTIMATION_HPP
#define CFMIMO_ESTIMATION_HPP

#include "channel.hpp"

namespace cfmimo {

// ------------------------------------------------------------------------
// Pilots

/// Pilot book: row k is the sequence of user k over T channel uses.
using PilotSet = ComplexMatrix;

/// Rows of the K x K unitary DFT matrix: sum_n psi_k[n] conj(psi_l[n]) = delta(k - l).
inline PilotSet dft_pilots(std::size_t num_users)
{
    PilotSet p(num_users, num_users);
    const double scale = 1.0 / std::sqrt(static_cast<double>(num_users));
    for (std::size_t k = 0; k < num_users; ++k)
        for (std::size_t n = 0; n < num_users; ++n)
            p(k, n) = std::polar(scale, -2.0 * pi * static_cast<double>(k * n % num_users) /
                                            static_cast<double>(num_users));
    return p;
}

inline void require_orthonormal(const PilotSet& pilots, double tol = 1e-9)
{
    for (std::size_t k = 0; k < pilots.rows(); ++k) {
        for (std::size_t l = 0; l < pilots.rows(); ++l) {
            const cplx g = dot_tc(pilots.row(k), pilots.row(l));
            const double target = k == l ? 1.0 : 0.0;
            if (std::abs(g - target) > tol)
                throw std::invalid_argument("pilot set is not orthonormal");
        }
    }
}

// ------------------------------------------------------------------------
// Uplink: NLoS estimation at the APs

struct UplinkEstimate {
    std::vector<cplx> est;
    double err_var = 1.0; // per entry, sigma_u^2 / (beta + sigma_u^2)
    double est_var = 0.0; // per entry, beta / (beta + sigma_u^2)
};

/// Received pilot block at one AP: row n is the N-vector observed at channel use n.
inline ComplexMatrix simulate_uplink_block(const LinkStatistics& stats, const ChannelRealization& r, std::size_t m,
                                           const PilotSet& pilots, double sigma_u2, Rng& rng)
{
    const std::size_t K = stats.num_ues();
    const std::size_t N = stats.antennas();
    const std::size_t T = pilots.cols();
    if (pilots.rows() != K)
        throw std::invalid_argument("one pilot sequence per UE required");
    ComplexMatrix y(T, N);
    const double sigma = std::sqrt(sigma_u2);
    for (std::size_t k = 0; k < K; ++k) {
        const auto h = r.composite(stats, m, k);
        for (std::size_t n = 0; n < T; ++n)
            for (std::size_t a = 0; a < N; ++a)
                y(n, a) += h[a] * pilots(k, n);
    }
    for (auto& v : y.data())
        v += sigma * complex_normal(rng);
    return y;
}

/// De-spreads user k's pilot and removes the known LoS part alpha * losvec.
/// The result is distributed as sqrt(beta) nlos + sigma_u w.
inline std::vector<cplx> uplink_correlate(const ComplexMatrix& received, const PilotSet& pilots, std::size_t k,
                                          std::span<const cplx> los_component)
{
    require_orthonormal(pilots);
    if (received.rows() != pilots.cols())
        throw std::invalid_argument("pilot block length mismatch");
    std::vector<cplx> out(received.cols());
    for (std::size_t n = 0; n < received.rows(); ++n)
        for (std::size_t a = 0; a < out.size(); ++a)
            out[a] += received(n, a) * std::conj(pilots(k, n));
    for (std::size_t a = 0; a < out.size(); ++a)
        out[a] -= los_component[a];
    return out;
}

/// LMMSE estimate of the unit-variance NLoS vector from y' = sqrt(beta) nlos + sigma_u w.
inline UplinkEstimate uplink_lmmse(std::span<const cplx> yprime, double beta, double sigma_u2)
{
    UplinkEstimate e;
    e.est.assign(yprime.size(), cplx{});
    const double denom = beta + sigma_u2;
    if (denom <= 0.0)
        return e;
    const double gain = std::sqrt(beta) / denom;
    for (std::size_t a = 0; a < yprime.size(); ++a)
        e.est[a] = gain * yprime[a];
    e.est_var = beta / denom;
    e.err_var = sigma_u2 / denom;
    return e;
}

/// Fast path: draws the correlated observation directly and fills
/// `r.est_nlos` for every link.
inline void estimate_uplink(ChannelRealization& r, const LinkStatistics& stats, double sigma_u2, Rng& rng)
{
    const std::size_t M = stats.num_aps();
    const std::size_t K = stats.num_ues();
    const std::size_t N = stats.antennas();
    r.est_nlos = LinkVectors(M, K, N);
    const double sigma = std::sqrt(sigma_u2);
    std::vector<cplx> y(N);
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t k = 0; k < K; ++k) {
            const double sb = std::sqrt(stats.beta(m, k));
            const auto nl = r.nlos(m, k);
            for (std::size_t a = 0; a < N; ++a)
                y[a] = sb * nl[a] + sigma * complex_normal(rng);
            const auto e = uplink_lmmse(y, stats.beta(m, k), sigma_u2);
            std::copy(e.est.begin(), e.est.end(), r.est_nlos(m, k).begin());
        }
    }
}

/// End-to-end variant: simulates every AP's pilot block and estimates from it.
inline void estimate_uplink_from_pilots(ChannelRealization& r, const LinkStatistics& stats, const PilotSet& pilots,
                                        double sigma_u2, Rng& rng)
{
    const std::size_t M = stats.num_aps();
    const std::size_t K = stats.num_ues();
    const std::size_t N = stats.antennas();
    r.est_nlos = LinkVectors(M, K, N);
    std::vector<cplx> los(N);
    for (std::size_t m = 0; m < M; ++m) {
        const auto block = simulate_uplink_block(stats, r, m, pilots, sigma_u2, rng);
        for (std::size_t k = 0; k < K; ++k) {
            const auto lv = stats.los_vec(m, k);
            for (std::size_t a = 0; a < N; ++a)
                los[a] = static_cast<double>(r.alpha(m, k)) * lv[a];
            const auto y = uplink_correlate(block, pilots, k, los);
            const auto e = uplink_lmmse(y, stats.beta(m, k), sigma_u2);
            std::copy(e.est.begin(), e.est.end(), r.est_nlos(m, k).begin());
        }
    }
}

// ------------------------------------------------------------------------
// Downlink: effective-channel estimation at the UEs

struct DownlinkEstimate {
    cplx gamma_hat{};
    double hat_var = 0.0;   // E|gamma_hat|^2
    double tilde_var = 0.0; // E|gamma_tilde|^2
};

/// Pilot samples received by UE k: y[n] = sum_i gamma_ki xi_i[n] + sigma_d w[n].
inline std::vector<cplx> simulate_downlink_block(std::span<const cplx> gamma_row, const PilotSet& pilots,
                                                 double sigma_d2, Rng& rng)
{
    const std::size_t T = pilots.cols();
    std::vector<cplx> y(T);
    for (std::size_t i = 0; i < gamma_row.size(); ++i)
        for (std::size_t n = 0; n < T; ++n)
            y[n] += gamma_row[i] * pilots(i, n);
    const double sigma = std::sqrt(sigma_d2);
    for (auto& v : y)
        v += sigma * complex_normal(rng);
    return y;
}

/// Correlates with UE k's own pilot and strips the known slow-fading part,
/// leaving gamma_bar_kk + sigma_d w'.
inline cplx downlink_correlate_and_strip(std::span<const cplx> received, const PilotSet& pilots, std::size_t k,
                                         cplx gamma_dot)
{
    require_orthonormal(pilots);
    if (received.size() != pilots.cols())
        throw std::invalid_argument("pilot block length mismatch");
    return dot_tc(received, pilots.row(k)) - gamma_dot;
}

/// Scalar LMMSE with known second moment E|gamma_bar|^2 = gammabar_var.
inline DownlinkEstimate downlink_lmmse(cplx ybar, double gammabar_var, double sigma_d2)
{
    DownlinkEstimate e;
    const double denom = gammabar_var + sigma_d2;
    if (gammabar_var <= 0.0 || denom <= 0.0)
        return e;
    const double gain = gammabar_var / denom;
    e.gamma_hat = gain * ybar;
    e.hat_var = gammabar_var * gain;
    e.tilde_var = gammabar_var * sigma_d2 / denom;
    return e;
}

} // namespace cfmimo

#endif // CFMIMO_ESTIMATION_HPP
