// SPDX-License-Identifier: Apache-2.0

#include "cfmimo/estimation.hpp"

#include <gtest/gtest.h>

using namespace cfmimo;

namespace {

LinkStatistics toy_stats(double beta)
{
    // One AP, two UEs, two antennas, unit LoS vectors.
    LinkVectors los(1, 2, 2);
    los(0, 0)[0] = 1.0;
    los(0, 0)[1] = cplx(0.0, 1.0);
    los(0, 1)[0] = cplx(0.6, 0.8);
    los(0, 1)[1] = 1.0;
    RealMatrix q(1, 2, 0.5), b(1, 2, beta);
    return LinkStatistics(q, b, los);
}

} // namespace

TEST(Pilots, DftBookIsOrthonormal)
{
    for (std::size_t k : {1u, 2u, 3u, 8u, 13u})
        EXPECT_NO_THROW(require_orthonormal(dft_pilots(k)));
    PilotSet bad(2, 2);
    bad(0, 0) = bad(1, 0) = 1.0;
    EXPECT_THROW(require_orthonormal(bad), std::invalid_argument);
}

TEST(UplinkLmmse, VarianceSplitIsExact)
{
    std::vector<cplx> y{cplx(1.0, 2.0), cplx(-0.5, 0.1)};
    for (double beta : {1e-9, 0.3, 1.0, 7.0}) {
        for (double s2 : {0.0, 1e-12, 0.2, 5.0}) {
            const auto e = uplink_lmmse(y, beta, s2);
            EXPECT_NEAR(e.est_var + e.err_var, 1.0, 1e-12);
            EXPECT_NEAR(e.est_var, beta / (beta + s2), 1e-12);
            EXPECT_NEAR(std::abs(e.est[0] - std::sqrt(beta) / (beta + s2) * y[0]), 0.0, 1e-12 * std::abs(e.est[0]) + 1e-300);
        }
    }
}

TEST(UplinkLmmse, NoiselessTrainingRecoversChannel)
{
    const double beta = 0.37;
    std::vector<cplx> nlos{cplx(0.3, -1.1), cplx(2.0, 0.5)};
    std::vector<cplx> y{std::sqrt(beta) * nlos[0], std::sqrt(beta) * nlos[1]};
    const auto e = uplink_lmmse(y, beta, 0.0);
    for (std::size_t n = 0; n < 2; ++n)
        EXPECT_NEAR(std::abs(e.est[n] - nlos[n]), 0.0, 1e-14);
    EXPECT_EQ(e.err_var, 0.0);
}

TEST(UplinkLmmse, OrthogonalityAndMoments)
{
    const double beta = 0.8, s2 = 0.5;
    Rng rng = make_rng(21);
    const std::size_t n = 100000;
    std::vector<double> cross_re(n), cross_im(n);
    double est2 = 0.0, err2 = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        const cplx h = complex_normal(rng);
        const cplx y = std::sqrt(beta) * h + std::sqrt(s2) * complex_normal(rng);
        const cplx est = uplink_lmmse(std::span<const cplx>(&y, 1), beta, s2).est[0];
        const cplx err = h - est;
        const cplx c = est * std::conj(err);
        cross_re[t] = c.real();
        cross_im[t] = c.imag();
        est2 += std::norm(est);
        err2 += std::norm(err);
    }
    const auto re = mean_and_stderr(cross_re), im = mean_and_stderr(cross_im);
    EXPECT_LT(std::abs(re.mean), 3.0 * re.stderr_);
    EXPECT_LT(std::abs(im.mean), 3.0 * im.stderr_);
    EXPECT_NEAR(est2 / n, beta / (beta + s2), 0.01);
    EXPECT_NEAR(err2 / n, s2 / (beta + s2), 0.01);
}

TEST(UplinkPipeline, PilotBlockMatchesFastPathDistribution)
{
    NetworkConfig cfg;
    cfg.num_aps = 2;
    cfg.num_ues = 3;
    cfg.antennas_per_ap = 2;
    cfg.area_side = 30.0;
    const auto base = LinkStatistics::from_deployment(deploy(cfg, 1), cfg);
    // Comparable LoS and NLoS scales so that LoS stripping matters.
    RealMatrix beta(2, 3);
    for (std::size_t m = 0; m < 2; ++m)
        for (std::size_t k = 0; k < 3; ++k)
            beta(m, k) = base.zeta_self(m, k);
    const LinkStatistics s(base.q(), beta, base.los_vectors());
    const double s2 = 0.5 * beta(0, 0);
    const auto pilots = dft_pilots(3);
    Rng rng = make_rng(5);
    const std::size_t trials = 20000;
    double err_pipeline = 0.0, err_fast = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        auto r = sample_realization(s, rng);
        auto r2 = r;
        estimate_uplink_from_pilots(r, s, pilots, s2, rng);
        estimate_uplink(r2, s, s2, rng);
        const auto e1 = r.est_nlos(0, 1), e2 = r2.est_nlos(0, 1), h = r.nlos(0, 1);
        err_pipeline += std::norm(h[0] - e1[0]);
        err_fast += std::norm(h[0] - e2[0]);
    }
    const double expected = s2 / (beta(0, 1) + s2);
    EXPECT_NEAR(err_pipeline / trials, expected, 0.05 * expected);
    EXPECT_NEAR(err_fast / trials, expected, 0.05 * expected);
}

TEST(UplinkPipeline, CorrelatorRemovesLosAndOtherUsers)
{
    const auto s = toy_stats(0.0);
    ChannelRealization r;
    r.alpha = Matrix<std::uint8_t>(1, 2, 1);
    r.nlos = LinkVectors(1, 2, 2);
    const auto pilots = dft_pilots(2);
    Rng rng = make_rng(1);
    const auto block = simulate_uplink_block(s, r, 0, pilots, 0.0, rng);
    const auto y = uplink_correlate(block, pilots, 1, s.los_vec(0, 1));
    for (const auto& v : y)
        EXPECT_NEAR(std::abs(v), 0.0, 1e-14);
}

TEST(DownlinkLmmse, SplitIdentityAndLimits)
{
    for (double g : {1e-8, 0.1, 3.0}) {
        for (double s2 : {0.0, 1e-3, 2.0, 1e12}) {
            const auto e = downlink_lmmse(cplx(0.2, -0.4), g, s2);
            EXPECT_NEAR(e.hat_var + e.tilde_var, g, 1e-12 * g);
        }
    }
    const auto exact = downlink_lmmse(cplx(0.2, -0.4), 1.0, 0.0);
    EXPECT_EQ(exact.gamma_hat, cplx(0.2, -0.4));
    EXPECT_EQ(exact.tilde_var, 0.0);
    const auto useless = downlink_lmmse(cplx(0.2, -0.4), 1.0, 1e15);
    EXPECT_LT(useless.hat_var, 1e-14);
    const auto none = downlink_lmmse(cplx(1.0, 1.0), 0.0, 1.0);
    EXPECT_EQ(none.gamma_hat, cplx{});
    EXPECT_EQ(none.hat_var, 0.0);
}

TEST(DownlinkLmmse, OrthogonalityAtScale)
{
    const double g = 2.0, s2 = 0.7;
    Rng rng = make_rng(8);
    const std::size_t n = 100000;
    std::vector<double> cross(n);
    for (std::size_t t = 0; t < n; ++t) {
        const cplx bar = std::sqrt(g) * complex_normal(rng);
        const cplx y = bar + std::sqrt(s2) * complex_normal(rng);
        const cplx hat = downlink_lmmse(y, g, s2).gamma_hat;
        cross[t] = (hat * std::conj(bar - hat)).real();
    }
    const auto e = mean_and_stderr(cross);
    EXPECT_LT(std::abs(e.mean), 3.0 * e.stderr_);
}

TEST(DownlinkPipeline, CorrelateAndStrip)
{
    const auto pilots = dft_pilots(3);
    const std::vector<cplx> row{cplx(1.0, 0.5), cplx(-2.0, 0.0), cplx(0.0, 3.0)};
    Rng rng = make_rng(2);
    const auto y = simulate_downlink_block(row, pilots, 0.0, rng);
    const cplx dot(0.25, 0.25);
    const cplx ybar = downlink_correlate_and_strip(y, pilots, 1, dot);
    EXPECT_NEAR(std::abs(ybar - (row[1] - dot)), 0.0, 1e-12);
}
