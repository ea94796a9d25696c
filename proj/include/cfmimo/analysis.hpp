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

#ifndef CFMIMO_ANALYSIS_HPP
#define CFMIMO_ANALYSIS_HPP

#include "precoder.hpp"

#include <algorithm>
#include <optional>

namespace cfmimo {

/// Second moments of the effective downlink channels for one scheme, per user.
///
/// gamma_kk splits into gamma_dot (slow fading, known at the UE) and
/// gamma_bar (fast fading); gamma_bar splits into the UE's estimate
/// gamma_hat and the error gamma_tilde. gamma_bar is not zero-mean for the
/// full-CSI schemes, so the dot/bar and dot/hat correlations are carried
/// explicitly:
///   e_gkk2 = e_gdot2 + e_gbar2 + 2 e_dot_bar
///   e_gbar2 = e_ghat2 + e_gtilde2
struct MomentSet {
    std::vector<double> e_gkk2;    // E|gamma_kk|^2
    RealMatrix e_gki2;             // E|gamma_ki|^2, K x K (diagonal = e_gkk2)
    std::vector<double> e_gdot2;   // E|gamma_dot_kk|^2
    std::vector<double> e_gbar2;   // E|gamma_bar_kk|^2
    std::vector<double> e_ghat2;   // E|gamma_hat_kk|^2
    std::vector<double> e_gtilde2; // E|gamma_tilde_kk|^2
    std::vector<double> e_dot_bar; // Re E[conj(gamma_dot) gamma_bar]
    std::vector<double> e_dot_hat; // Re E[conj(gamma_dot) gamma_hat]

    explicit MomentSet(std::size_t K = 0)
        : e_gkk2(K), e_gki2(K, K), e_gdot2(K), e_gbar2(K), e_ghat2(K), e_gtilde2(K), e_dot_bar(K), e_dot_hat(K)
    {
    }

    std::size_t num_ues() const noexcept { return e_gkk2.size(); }

    /// sum_{i != k} E|gamma_ki|^2
    double interference(std::size_t k) const
    {
        double s = 0.0;
        for (std::size_t i = 0; i < num_ues(); ++i)
            if (i != k)
                s += e_gki2(k, i);
        return s;
    }
};

namespace detail {

struct LinkMoment {
    cplx mean{};
    double second = 0.0;
};

/// Accumulates E|sum_m x_m T_m|^2 for independent per-AP terms T_m as
/// sum_m x_m^2 Var(T_m) + |sum_m x_m E T_m|^2.
class MomentAccumulator {
public:
    void add(double x, const LinkMoment& t)
    {
        if (x == 0.0)
            return;
        var_ += x * x * std::max(0.0, t.second - std::norm(t.mean));
        mean_ += x * t.mean;
    }
    cplx mean() const { return mean_.value(); }
    double second() const { return var_.value() + std::norm(mean_.value()); }

private:
    CompensatedSum<double> var_;
    CompensatedSum<cplx> mean_;
};

/// Fraction of NLoS energy captured by the uplink estimate, beta / (beta + sigma_u^2).
inline double capture(double beta, double sigma_u2)
{
    const double d = beta + sigma_u2;
    return d > 0.0 ? beta / d : 0.0;
}

// Per-AP terms. "Full" covers both CSI-based precoders; c = 1 is accurate CSI.

inline LinkMoment full_desired(double q, double beta, double zkk, double n, double c)
{
    LinkMoment t;
    t.mean = q * zkk + n * beta * c;
    t.second = q * zkk * zkk + q * beta * zkk * (1.0 + c) + beta * beta * (c * c * n * (n + 1.0) + n * c * (1.0 - c)) +
               2.0 * q * zkk * beta * n * c;
    return t;
}

inline LinkMoment full_bar(double q, double beta, double zkk, double n, double c)
{
    LinkMoment t;
    t.mean = n * beta * c;
    t.second = q * beta * zkk * (1.0 + c) + beta * beta * (c * c * n * (n + 1.0) + n * c * (1.0 - c));
    return t;
}

inline LinkMoment full_cross(double qk, double qi, double bk, double bi, cplx zki, double zkk, double zii, double n,
                             double ci)
{
    LinkMoment t;
    t.mean = qk * qi * zki;
    t.second = qk * qi * std::norm(zki) + n * bk * bi * ci + qk * bi * ci * zkk + qi * bk * zii;
    return t;
}

inline LinkMoment stat_desired(double q, double beta, double zkk)
{
    return {q * zkk, q * zkk * zkk + q * beta * zkk};
}

inline LinkMoment stat_bar(double q, double beta, double zkk) { return {0.0, q * beta * zkk}; }

inline LinkMoment stat_cross(double qk, double qi, double bk, cplx zki, double zii)
{
    return {qk * qi * zki, qk * qi * std::norm(zki) + bk * qi * zii};
}

inline LinkMoment slow_part(double q, double zkk) { return {q * zkk, q * zkk * zkk}; }

/// Shared assembly for all schemes. `full` selects the CSI-based formulas,
/// `c_of(beta)` gives the estimate capture ratio.
template <typename Capture>
MomentSet assemble(const LinkStatistics& stats, const PowerAllocation& alloc, bool full, Capture&& c_of)
{
    const std::size_t M = stats.num_aps();
    const std::size_t K = stats.num_ues();
    const double n = static_cast<double>(stats.antennas());
    MomentSet ms(K);
    for (std::size_t k = 0; k < K; ++k) {
        MomentAccumulator desired, dot, bar;
        std::vector<MomentAccumulator> cross(K);
        for (std::size_t m = 0; m < M; ++m) {
            const double qk = stats.q(m, k);
            const double bk = stats.beta(m, k);
            const double zkk = stats.zeta_self(m, k);
            const double xk = alloc.x(m, k);
            if (xk != 0.0) {
                if (full) {
                    desired.add(xk, full_desired(qk, bk, zkk, n, c_of(bk)));
                    bar.add(xk, full_bar(qk, bk, zkk, n, c_of(bk)));
                } else {
                    desired.add(xk, stat_desired(qk, bk, zkk));
                    bar.add(xk, stat_bar(qk, bk, zkk));
                }
                dot.add(xk, slow_part(qk, zkk));
            }
            const auto& zslice = stats.zeta_slice(m);
            for (std::size_t i = 0; i < K; ++i) {
                const double xi = alloc.x(m, i);
                if (i == k || xi == 0.0)
                    continue;
                const double qi = stats.q(m, i);
                const double zii = stats.zeta_self(m, i);
                if (full)
                    cross[i].add(xi, full_cross(qk, qi, bk, stats.beta(m, i), zslice(k, i), zkk, zii, n,
                                                c_of(stats.beta(m, i))));
                else
                    cross[i].add(xi, stat_cross(qk, qi, bk, zslice(k, i), zii));
            }
        }
        ms.e_gkk2[k] = desired.second();
        ms.e_gdot2[k] = dot.second();
        ms.e_gbar2[k] = bar.second();
        // dot and bar terms of one AP are uncorrelated, so only the means couple.
        ms.e_dot_bar[k] = (std::conj(dot.mean()) * bar.mean()).real();
        for (std::size_t i = 0; i < K; ++i)
            ms.e_gki2(k, i) = i == k ? ms.e_gkk2[k] : cross[i].second();
    }
    return ms;
}

/// Applies the scalar LMMSE split of gamma_bar at noise level sigma_d2.
inline void downlink_split(MomentSet& ms, double sigma_d2)
{
    for (std::size_t k = 0; k < ms.num_ues(); ++k) {
        const double g = ms.e_gbar2[k];
        const double denom = g + sigma_d2;
        const double gain = (g > 0.0 && denom > 0.0) ? g / denom : 0.0;
        ms.e_ghat2[k] = g * gain;
        ms.e_gtilde2[k] = denom > 0.0 ? g * sigma_d2 / denom : 0.0;
        ms.e_dot_hat[k] = gain * ms.e_dot_bar[k];
    }
}

} // namespace detail

/// Accurate CSI at APs and UEs. The UE knows gamma_bar exactly.
inline MomentSet moments_accurate(const LinkStatistics& stats, const PowerAllocation& alloc)
{
    MomentSet ms = detail::assemble(stats, alloc, true, [](double) { return 1.0; });
    ms.e_ghat2 = ms.e_gbar2;
    ms.e_gtilde2.assign(ms.num_ues(), 0.0);
    ms.e_dot_hat = ms.e_dot_bar;
    return ms;
}

/// Uplink-trained CSI at the APs, downlink-trained effective channel at the UEs.
inline MomentSet moments_estimated(const LinkStatistics& stats, const PowerAllocation& alloc, double sigma_u2,
                                   double sigma_d2)
{
    MomentSet ms = detail::assemble(stats, alloc, true, [sigma_u2](double b) { return detail::capture(b, sigma_u2); });
    detail::downlink_split(ms, sigma_d2);
    return ms;
}

/// LoS-only precoding. Without downlink training all of gamma_bar is self
/// interference (e_ghat2 = 0, e_gtilde2 = e_gbar2).
inline MomentSet moments_statistical(const LinkStatistics& stats, const PowerAllocation& alloc, double sigma_d2,
                                     bool with_dl_training)
{
    MomentSet ms = detail::assemble(stats, alloc, false, [](double) { return 0.0; });
    if (with_dl_training) {
        detail::downlink_split(ms, sigma_d2);
    } else {
        ms.e_ghat2.assign(ms.num_ues(), 0.0);
        ms.e_gtilde2 = ms.e_gbar2;
        ms.e_dot_hat.assign(ms.num_ues(), 0.0);
    }
    return ms;
}

inline MomentSet closed_form_moments(Scheme scheme, const LinkStatistics& stats, const PowerAllocation& alloc,
                                     double sigma_u2, double sigma_d2)
{
    switch (scheme) {
    case Scheme::AccurateCSI: return moments_accurate(stats, alloc);
    case Scheme::EstimatedCSI: return moments_estimated(stats, alloc, sigma_u2, sigma_d2);
    case Scheme::StatisticalNoDL: return moments_statistical(stats, alloc, sigma_d2, false);
    case Scheme::StatisticalWithDL: return moments_statistical(stats, alloc, sigma_d2, true);
    }
    return MomentSet{};
}

// ------------------------------------------------------------------------
// Rates

struct SinrTerms {
    double useful = 0.0;       // numerator of the Jensen bound
    double self = 0.0;         // self interference in the denominator
    double interference = 0.0; // sum_{i != k} E|gamma_ki|^2
};

/// Scheme-specific split of user k's moments into useful signal, self
/// interference and inter-stream interference.
inline SinrTerms sinr_terms(Scheme scheme, const MomentSet& ms, std::size_t k)
{
    SinrTerms t;
    t.interference = ms.interference(k);
    switch (scheme) {
    case Scheme::AccurateCSI:
        t.useful = ms.e_gkk2[k];
        break;
    case Scheme::StatisticalNoDL:
        t.useful = ms.e_gdot2[k];
        t.self = ms.e_gbar2[k];
        break;
    case Scheme::EstimatedCSI:
    case Scheme::StatisticalWithDL:
        t.useful = ms.e_gdot2[k] + ms.e_ghat2[k] + 2.0 * ms.e_dot_hat[k];
        t.self = ms.e_gtilde2[k];
        break;
    }
    return t;
}

/// Upper bound on each user's rate: log(1 + useful / (self + interference + sigma_o2)).
inline std::vector<double> rate_bound(Scheme scheme, const MomentSet& ms, double sigma_o2, double log_base = 2.0)
{
    std::vector<double> r(ms.num_ues());
    const double ln_base = std::log(log_base);
    for (std::size_t k = 0; k < r.size(); ++k) {
        const auto t = sinr_terms(scheme, ms, k);
        const double den = t.self + t.interference + sigma_o2;
        r[k] = den > 0.0 ? std::log1p(t.useful / den) / ln_base : 0.0;
    }
    return r;
}

struct McOptions {
    double log_base = 2.0;
    bool antithetic = true;          // mirror the Gaussian draws in pairs
    bool instantaneous_sinr = false; // deviation: instantaneous interference in the denominator
};

/// One fading draw: effective channels plus the UE-side downlink pilot noise
/// (one CN(0, 1) value per UE).
struct TrialDraw {
    EffectiveChannels eff;
    std::vector<cplx> dl_noise;
};

namespace detail {

inline void negate(LinkVectors& v)
{
    for (auto& z : v.data())
        z = -z;
}

} // namespace detail

/// Draws one realization, or an antithetic pair sharing alpha with the
/// Gaussian parts mirrored. Goes through the library's estimator and
/// precoder code paths.
inline std::vector<TrialDraw> draw_trial(Scheme scheme, const LinkStatistics& stats, const PowerAllocation& alloc,
                                         double sigma_u2, bool antithetic, Rng& rng)
{
    ChannelRealization r = sample_realization(stats, rng);
    if (scheme == Scheme::EstimatedCSI)
        estimate_uplink(r, stats, sigma_u2, rng);
    std::vector<cplx> dl(stats.num_ues());
    fill_complex_normal(dl, rng);

    std::vector<TrialDraw> out;
    out.push_back({effective_channels(r, stats, build_precoders(scheme, r, stats, alloc), alloc), dl});
    if (antithetic) {
        detail::negate(r.nlos);
        if (r.has_estimates())
            detail::negate(r.est_nlos);
        for (auto& v : dl)
            v = -v;
        out.push_back({effective_channels(r, stats, build_precoders(scheme, r, stats, alloc), alloc), dl});
    }
    return out;
}

/// UE k's estimate of gamma_bar for one draw.
inline cplx ue_estimate(Scheme scheme, const TrialDraw& d, const MomentSet& ms, double sigma_d2, std::size_t k)
{
    switch (scheme) {
    case Scheme::AccurateCSI: return d.eff.gamma_bar[k];
    case Scheme::StatisticalNoDL: return 0.0;
    case Scheme::EstimatedCSI:
    case Scheme::StatisticalWithDL: {
        const cplx ybar = d.eff.gamma_bar[k] + std::sqrt(sigma_d2) * d.dl_noise[k];
        return downlink_lmmse(ybar, ms.e_gbar2[k], sigma_d2).gamma_hat;
    }
    }
    return 0.0;
}

/// Instantaneous log term of every user for one draw.
inline void instantaneous_rates(Scheme scheme, const TrialDraw& d, const MomentSet& ms, double sigma_o2,
                                double sigma_d2, const McOptions& opt, std::span<double> out)
{
    const std::size_t K = d.eff.gamma_bar.size();
    const double ln_base = std::log(opt.log_base);
    for (std::size_t k = 0; k < K; ++k) {
        const cplx hat = ue_estimate(scheme, d, ms, sigma_d2, k);
        const cplx useful = d.eff.gamma_dot[k] + hat;
        double den = 0.0;
        if (opt.instantaneous_sinr) {
            for (std::size_t i = 0; i < K; ++i)
                if (i != k)
                    den += std::norm(d.eff.gamma(k, i));
            den += std::norm(d.eff.gamma_bar[k] - hat);
        } else {
            const auto t = sinr_terms(scheme, ms, k);
            den = t.self + t.interference;
        }
        den += sigma_o2;
        out[k] = den > 0.0 ? std::log1p(std::norm(useful) / den) / ln_base : 0.0;
    }
}

/// Monte-Carlo average of the instantaneous rate expression. Denominators use
/// the closed-form expectations in `ms` (unless opt.instantaneous_sinr).
/// With antithetic pairs, `trials` counts pairs and the standard error is
/// computed from the pair means.
inline std::vector<Estimate> mc_rate(Scheme scheme, Rng& rng, const LinkStatistics& stats,
                                     const PowerAllocation& alloc, const MomentSet& ms, double sigma_o2,
                                     double sigma_u2, double sigma_d2, std::size_t trials, const McOptions& opt = {})
{
    if (trials == 0)
        throw std::invalid_argument("mc_rate needs at least one trial");
    const std::size_t K = stats.num_ues();
    std::vector<std::vector<double>> samples(K, std::vector<double>(trials));
    std::vector<double> buf(K);
    for (std::size_t t = 0; t < trials; ++t) {
        const auto draws = draw_trial(scheme, stats, alloc, sigma_u2, opt.antithetic, rng);
        std::vector<double> acc(K, 0.0);
        for (const auto& d : draws) {
            instantaneous_rates(scheme, d, ms, sigma_o2, sigma_d2, opt, buf);
            for (std::size_t k = 0; k < K; ++k)
                acc[k] += buf[k];
        }
        for (std::size_t k = 0; k < K; ++k)
            samples[k][t] = acc[k] / static_cast<double>(draws.size());
    }
    std::vector<Estimate> out(K);
    for (std::size_t k = 0; k < K; ++k)
        out[k] = mean_and_stderr(samples[k]);
    return out;
}

inline std::vector<Estimate> mc_rate(Scheme scheme, Rng& rng, const LinkStatistics& stats,
                                     const PowerAllocation& alloc, double sigma_o2, double sigma_u2, double sigma_d2,
                                     std::size_t trials, const McOptions& opt = {})
{
    const MomentSet ms = closed_form_moments(scheme, stats, alloc, sigma_u2, sigma_d2);
    return mc_rate(scheme, rng, stats, alloc, ms, sigma_o2, sigma_u2, sigma_d2, trials, opt);
}

// ------------------------------------------------------------------------
// Brute-force moment oracle

struct OracleMoments {
    MomentSet mean;
    MomentSet stderr_;
    std::size_t trials = 0;
};

/// Estimates every MomentSet field by sampling (alpha, NLoS fading, uplink
/// and downlink pilot noise) and forming the effective channels directly
/// from their definitions. Shares no code with the closed-form path or the
/// library's estimator/precoder routines. Standard errors are delete-one
/// batch jackknife estimates (the downlink split is a ratio of sample means).
inline OracleMoments oracle_moments(Scheme scheme, const LinkStatistics& stats, const PowerAllocation& alloc,
                                    double sigma_u2, double sigma_d2, std::size_t trials, Rng& rng,
                                    std::size_t batches = 100)
{
    const std::size_t M = stats.num_aps();
    const std::size_t K = stats.num_ues();
    const std::size_t N = stats.antennas();
    batches = std::clamp<std::size_t>(batches, 2, std::max<std::size_t>(2, trials));
    const std::size_t per_batch = std::max<std::size_t>(1, trials / batches);
    trials = per_batch * batches;

    // Raw per-batch sums. Per user: |g_ki|^2 for all i, |dot|^2, |bar|^2,
    // |ybar|^2, Re(bar conj(ybar)), Re(conj(dot) ybar), Re(conj(dot) bar).
    const std::size_t fields = K + 6;
    std::vector<double> sums(batches * K * fields, 0.0);
    auto slot = [&](std::size_t b, std::size_t k, std::size_t f) -> double& { return sums[(b * K + k) * fields + f]; };

    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> g(0.0, std::sqrt(0.5));
    auto cn = [&] {
        const double re = g(rng);
        const double im = g(rng);
        return cplx(re, im);
    };

    const double su = std::sqrt(sigma_u2);
    const double sd = std::sqrt(sigma_d2);
    std::vector<double> alpha(M * K);
    std::vector<cplx> h(M * K * N), pre(M * K * N), gam(K * K), dot(K);

    for (std::size_t b = 0; b < batches; ++b) {
        for (std::size_t t = 0; t < per_batch; ++t) {
            for (std::size_t m = 0; m < M; ++m) {
                for (std::size_t k = 0; k < K; ++k) {
                    const std::size_t l = m * K + k;
                    alpha[l] = uni(rng) < stats.q(m, k) ? 1.0 : 0.0;
                    const double beta = stats.beta(m, k);
                    const double sb = std::sqrt(beta);
                    const auto los = stats.los_vec(m, k);
                    for (std::size_t n = 0; n < N; ++n) {
                        const cplx fading = cn();
                        const cplx noise = cn();
                        h[l * N + n] = alpha[l] * los[n] + sb * fading;
                        cplx dir{}; // precoding direction before conjugation
                        switch (scheme) {
                        case Scheme::AccurateCSI: dir = h[l * N + n]; break;
                        case Scheme::EstimatedCSI: {
                            const double d = beta + sigma_u2;
                            const cplx est = d > 0.0 ? (sb / d) * (sb * fading + su * noise) : cplx{};
                            dir = alpha[l] * los[n] + sb * est;
                            break;
                        }
                        case Scheme::StatisticalNoDL:
                        case Scheme::StatisticalWithDL: dir = alpha[l] * los[n]; break;
                        }
                        pre[l * N + n] = alloc.x(m, k) * std::conj(dir);
                    }
                }
            }
            std::fill(gam.begin(), gam.end(), cplx{});
            std::fill(dot.begin(), dot.end(), cplx{});
            for (std::size_t m = 0; m < M; ++m) {
                for (std::size_t k = 0; k < K; ++k) {
                    const std::size_t lk = m * K + k;
                    for (std::size_t i = 0; i < K; ++i) {
                        const std::size_t li = m * K + i;
                        cplx s{};
                        for (std::size_t n = 0; n < N; ++n)
                            s += h[lk * N + n] * pre[li * N + n];
                        gam[k * K + i] += s;
                    }
                    const auto los = stats.los_vec(m, k);
                    cplx z{};
                    for (std::size_t n = 0; n < N; ++n)
                        z += los[n] * std::conj(los[n]);
                    dot[k] += alloc.x(m, k) * alpha[lk] * z;
                }
            }
            for (std::size_t k = 0; k < K; ++k) {
                const cplx bar = gam[k * K + k] - dot[k];
                const cplx ybar = bar + sd * cn();
                for (std::size_t i = 0; i < K; ++i)
                    slot(b, k, i) += std::norm(gam[k * K + i]);
                slot(b, k, K + 0) += std::norm(dot[k]);
                slot(b, k, K + 1) += std::norm(bar);
                slot(b, k, K + 2) += std::norm(ybar);
                slot(b, k, K + 3) += (bar * std::conj(ybar)).real();
                slot(b, k, K + 4) += (std::conj(dot[k]) * ybar).real();
                slot(b, k, K + 5) += (std::conj(dot[k]) * bar).real();
            }
        }
    }

    // Turns raw means into MomentSet fields.
    auto finish = [&](const std::vector<double>& raw) {
        MomentSet ms(K);
        for (std::size_t k = 0; k < K; ++k) {
            auto r = [&](std::size_t f) { return raw[k * fields + f]; };
            for (std::size_t i = 0; i < K; ++i)
                ms.e_gki2(k, i) = r(i);
            ms.e_gkk2[k] = r(k);
            ms.e_gdot2[k] = r(K + 0);
            const double bar2 = r(K + 1);
            ms.e_gbar2[k] = bar2;
            ms.e_dot_bar[k] = r(K + 5);
            switch (scheme) {
            case Scheme::AccurateCSI:
                ms.e_ghat2[k] = bar2;
                ms.e_gtilde2[k] = 0.0;
                ms.e_dot_hat[k] = r(K + 5);
                break;
            case Scheme::StatisticalNoDL:
                ms.e_ghat2[k] = 0.0;
                ms.e_gtilde2[k] = bar2;
                ms.e_dot_hat[k] = 0.0;
                break;
            case Scheme::EstimatedCSI:
            case Scheme::StatisticalWithDL: {
                // hat = a * ybar with a from the sampled E|bar|^2; tilde = bar - hat.
                const double a = bar2 > 0.0 ? bar2 / (bar2 + sigma_d2) : 0.0;
                ms.e_ghat2[k] = a * a * r(K + 2);
                ms.e_gtilde2[k] = bar2 - 2.0 * a * r(K + 3) + a * a * r(K + 2);
                ms.e_dot_hat[k] = a * r(K + 4);
                break;
            }
            }
        }
        return ms;
    };

    const std::size_t width = K * fields;
    auto raw_mean = [&](std::optional<std::size_t> skip) {
        std::vector<double> raw(width, 0.0);
        std::size_t used = 0;
        for (std::size_t b = 0; b < batches; ++b) {
            if (skip && *skip == b)
                continue;
            ++used;
            for (std::size_t j = 0; j < width; ++j)
                raw[j] += sums[b * width + j];
        }
        for (auto& v : raw)
            v /= static_cast<double>(used * per_batch);
        return raw;
    };

    OracleMoments out;
    out.trials = trials;
    out.mean = finish(raw_mean(std::nullopt));

    // Jackknife: var = (B-1)/B * sum_b (theta_b - theta_bar)^2.
    std::vector<MomentSet> leave_out;
    leave_out.reserve(batches);
    for (std::size_t b = 0; b < batches; ++b)
        leave_out.push_back(finish(raw_mean(b)));
    const double fb = static_cast<double>(batches);
    auto jack = [&](auto&& get) {
        double avg = 0.0;
        for (const auto& ms : leave_out)
            avg += get(ms);
        avg /= fb;
        double ss = 0.0;
        for (const auto& ms : leave_out)
            ss += (get(ms) - avg) * (get(ms) - avg);
        return std::sqrt((fb - 1.0) / fb * ss);
    };
    out.stderr_ = MomentSet(K);
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t i = 0; i < K; ++i)
            out.stderr_.e_gki2(k, i) = jack([&](const MomentSet& ms) { return ms.e_gki2(k, i); });
        out.stderr_.e_gkk2[k] = out.stderr_.e_gki2(k, k);
        out.stderr_.e_gdot2[k] = jack([&](const MomentSet& ms) { return ms.e_gdot2[k]; });
        out.stderr_.e_gbar2[k] = jack([&](const MomentSet& ms) { return ms.e_gbar2[k]; });
        out.stderr_.e_ghat2[k] = jack([&](const MomentSet& ms) { return ms.e_ghat2[k]; });
        out.stderr_.e_gtilde2[k] = jack([&](const MomentSet& ms) { return ms.e_gtilde2[k]; });
        out.stderr_.e_dot_bar[k] = jack([&](const MomentSet& ms) { return ms.e_dot_bar[k]; });
        out.stderr_.e_dot_hat[k] = jack([&](const MomentSet& ms) { return ms.e_dot_hat[k]; });
    }
    return out;
}

// ------------------------------------------------------------------------
// Field-by-field comparison

struct FieldComparison {
    std::string field;
    std::size_t k = 0;
    std::size_t i = 0;
    double closed = 0.0;
    double oracle = 0.0;
    double stderr_ = 0.0;

    double abs_diff() const { return std::abs(closed - oracle); }
    double z() const { return stderr_ > 0.0 ? abs_diff() / stderr_ : (abs_diff() > 0.0 ? INFINITY : 0.0); }
    double rel_diff() const
    {
        const double s = std::max(std::abs(closed), std::abs(oracle));
        return s > 0.0 ? abs_diff() / s : 0.0;
    }
};

/// Lists every field of two MomentSets side by side.
inline std::vector<FieldComparison> compare_moments(const MomentSet& closed, const OracleMoments& oracle)
{
    std::vector<FieldComparison> out;
    const std::size_t K = closed.num_ues();
    auto add = [&](const char* name, std::size_t k, std::size_t i, double c, double o, double s) {
        out.push_back({name, k, i, c, o, s});
    };
    for (std::size_t k = 0; k < K; ++k) {
        add("e_gkk2", k, k, closed.e_gkk2[k], oracle.mean.e_gkk2[k], oracle.stderr_.e_gkk2[k]);
        for (std::size_t i = 0; i < K; ++i)
            if (i != k)
                add("e_gki2", k, i, closed.e_gki2(k, i), oracle.mean.e_gki2(k, i), oracle.stderr_.e_gki2(k, i));
        add("e_gdot2", k, k, closed.e_gdot2[k], oracle.mean.e_gdot2[k], oracle.stderr_.e_gdot2[k]);
        add("e_gbar2", k, k, closed.e_gbar2[k], oracle.mean.e_gbar2[k], oracle.stderr_.e_gbar2[k]);
        add("e_ghat2", k, k, closed.e_ghat2[k], oracle.mean.e_ghat2[k], oracle.stderr_.e_ghat2[k]);
        add("e_gtilde2", k, k, closed.e_gtilde2[k], oracle.mean.e_gtilde2[k], oracle.stderr_.e_gtilde2[k]);
        add("e_dot_bar", k, k, closed.e_dot_bar[k], oracle.mean.e_dot_bar[k], oracle.stderr_.e_dot_bar[k]);
        add("e_dot_hat", k, k, closed.e_dot_hat[k], oracle.mean.e_dot_hat[k], oracle.stderr_.e_dot_hat[k]);
    }
    return out;
}

// ------------------------------------------------------------------------
// Reports and CSV

struct SchemeRates {
    Scheme scheme = Scheme::AccurateCSI;
    std::vector<double> bound;
    std::vector<Estimate> mc;
};

struct RateReport {
    double sigma_o2 = 0.0;
    double log_base = 2.0;
    std::vector<SchemeRates> schemes;
};

inline double percentile(std::vector<double> v, double p)
{
    if (v.empty())
        return 0.0;
    std::sort(v.begin(), v.end());
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

namespace detail {
inline std::string num(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}
} // namespace detail

/// Long format: scheme,k,i,field,value (i = k for per-user fields).
inline void write_moments_csv(std::ostream& out, Scheme scheme, const MomentSet& ms, bool header = true)
{
    using detail::num;
    if (header)
        out << "scheme,k,i,field,value\n";
    const std::string s(to_string(scheme));
    for (std::size_t k = 0; k < ms.num_ues(); ++k) {
        for (std::size_t i = 0; i < ms.num_ues(); ++i)
            out << s << ',' << k << ',' << i << ",e_gki2," << num(ms.e_gki2(k, i)) << '\n';
        auto row = [&](const char* f, double v) { out << s << ',' << k << ',' << k << ',' << f << ',' << num(v) << '\n'; };
        row("e_gkk2", ms.e_gkk2[k]);
        row("e_gdot2", ms.e_gdot2[k]);
        row("e_gbar2", ms.e_gbar2[k]);
        row("e_ghat2", ms.e_ghat2[k]);
        row("e_gtilde2", ms.e_gtilde2[k]);
        row("e_dot_bar", ms.e_dot_bar[k]);
        row("e_dot_hat", ms.e_dot_hat[k]);
    }
}

/// scheme,user,bound_rate,mc_rate,mc_stderr
inline void write_rate_report_csv(std::ostream& out, const RateReport& r)
{
    using detail::num;
    out << "scheme,user,bound_rate,mc_rate,mc_stderr\n";
    for (const auto& s : r.schemes)
        for (std::size_t k = 0; k < s.bound.size(); ++k)
            out << to_string(s.scheme) << ',' << k << ',' << num(s.bound[k]) << ','
                << num(k < s.mc.size() ? s.mc[k].mean : 0.0) << ',' << num(k < s.mc.size() ? s.mc[k].stderr_ : 0.0)
                << '\n';
}

} // namespace cfmimo

#endif // CFMIMO_ANALYSIS_HPP
