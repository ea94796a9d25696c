// SPDX-License-Identifier: Apache-2.0

#include "cfmimo/estimation.hpp"
#include "cfmimo/precoder.hpp"

#include <gtest/gtest.h>

using namespace cfmimo;

namespace {

// One AP, one UE, two antennas with |los|^2 = 4.
LinkStatistics single_link(double q, double beta)
{
    LinkVectors los(1, 1, 2);
    los(0, 0)[0] = std::sqrt(2.0);
    los(0, 0)[1] = cplx(0.0, std::sqrt(2.0));
    return LinkStatistics(RealMatrix(1, 1, q), RealMatrix(1, 1, beta), los);
}

LinkStatistics random_stats(std::size_t M, std::size_t K, std::size_t N, std::uint64_t seed)
{
    NetworkConfig cfg;
    cfg.num_aps = M;
    cfg.num_ues = K;
    cfg.antennas_per_ap = N;
    cfg.area_side = 60.0;
    return LinkStatistics::from_deployment(deploy(cfg, seed), cfg);
}

} // namespace

TEST(Scheme, NamesRoundTrip)
{
    for (auto s : all_schemes)
        EXPECT_EQ(parse_scheme(to_string(s)), s);
    EXPECT_THROW(parse_scheme("zero_forcing"), config_error);
    EXPECT_EQ(parse_power_mode(to_string(PowerControlMode::PerUE)), PowerControlMode::PerUE);
    EXPECT_EQ(parse_power_split(to_string(PowerSplit::EqualCoefficient)), PowerSplit::EqualCoefficient);
}

TEST(StreamPower, HandWorkedExample)
{
    const auto s = single_link(0.5, 1.0);
    EXPECT_DOUBLE_EQ(expected_stream_power(Scheme::AccurateCSI, s, 1.0, 0, 0), 4.0);
    EXPECT_DOUBLE_EQ(expected_stream_power(Scheme::EstimatedCSI, s, 1.0, 0, 0), 3.0);
    EXPECT_DOUBLE_EQ(expected_stream_power(Scheme::StatisticalNoDL, s, 1.0, 0, 0), 2.0);
    EXPECT_DOUBLE_EQ(expected_stream_power(Scheme::StatisticalWithDL, s, 1.0, 0, 0), 2.0);
}

TEST(StreamPower, MatchesSampledBeamformerNorm)
{
    const auto s = single_link(0.5, 1.0);
    const double su2 = 1.0;
    const PowerAllocation unit{RealMatrix(1, 1, 1.0), {}, {}, 0.0};
    Rng rng = make_rng(4);
    const std::size_t trials = 200000;
    for (auto scheme : all_schemes) {
        std::vector<double> norms(trials);
        for (std::size_t t = 0; t < trials; ++t) {
            auto r = sample_realization(s, rng);
            estimate_uplink(r, s, su2, rng);
            norms[t] = squared_norm(build_precoders(scheme, r, s, unit).columns(0, 0));
        }
        const auto e = mean_and_stderr(norms);
        EXPECT_NEAR(e.mean, expected_stream_power(scheme, s, su2, 0, 0), 4.0 * e.stderr_) << to_string(scheme);
    }
}

TEST(PowerControl, GroupsSpendExactlyTheBudget)
{
    const auto s = random_stats(6, 3, 2, 2);
    const double su2 = 1e-13, budget = 0.7;
    for (auto scheme : all_schemes) {
        for (auto split : {PowerSplit::EqualPower, PowerSplit::EqualCoefficient}) {
            const auto ap = solve_power(PowerControlMode::PerAP, scheme, s, su2, budget, split);
            for (std::size_t m = 0; m < 6; ++m) {
                double p = 0.0;
                for (std::size_t k = 0; k < 3; ++k)
                    p += ap.x(m, k) * ap.x(m, k) * expected_stream_power(scheme, s, su2, m, k);
                if (std::find(ap.silent_aps.begin(), ap.silent_aps.end(), m) == ap.silent_aps.end()) {
                    EXPECT_NEAR(p, budget, 1e-12 * budget);
                }
            }
            const auto ue = solve_power(PowerControlMode::PerUE, scheme, s, su2, budget, split);
            for (std::size_t k = 0; k < 3; ++k) {
                double p = 0.0;
                for (std::size_t m = 0; m < 6; ++m)
                    p += ue.x(m, k) * ue.x(m, k) * expected_stream_power(scheme, s, su2, m, k);
                EXPECT_NEAR(p, budget, 1e-12 * budget);
            }
        }
    }
}

TEST(PowerControl, EqualPowerAndEqualCoefficientSplits)
{
    const auto s = random_stats(4, 2, 1, 7);
    const auto a = solve_power(PowerControlMode::PerAP, Scheme::AccurateCSI, s, 0.0, 1.0, PowerSplit::EqualPower);
    const auto b =
        solve_power(PowerControlMode::PerAP, Scheme::AccurateCSI, s, 0.0, 1.0, PowerSplit::EqualCoefficient);
    for (std::size_t m = 0; m < 4; ++m) {
        const double p0 = a.x(m, 0) * a.x(m, 0) * expected_stream_power(Scheme::AccurateCSI, s, 0.0, m, 0);
        const double p1 = a.x(m, 1) * a.x(m, 1) * expected_stream_power(Scheme::AccurateCSI, s, 0.0, m, 1);
        EXPECT_NEAR(p0, p1, 1e-12 * p0);
        EXPECT_DOUBLE_EQ(b.x(m, 0), b.x(m, 1));
    }
}

TEST(PowerControl, SilentApUnderStatisticalPrecoding)
{
    RealMatrix q(2, 2);
    q(0, 0) = 0.8;
    const LinkStatistics base = random_stats(2, 2, 2, 3);
    const auto s = base.with_los_probabilities(q);
    const auto ap = solve_power(PowerControlMode::PerAP, Scheme::StatisticalNoDL, s, 0.0, 1.0);
    ASSERT_EQ(ap.silent_aps, std::vector<std::size_t>{1});
    ASSERT_EQ(ap.warnings.size(), 1u);
    EXPECT_EQ(ap.x(1, 0), 0.0);
    EXPECT_EQ(ap.x(0, 1), 0.0);
    EXPECT_NEAR(ap.radiated_power, 1.0, 1e-12);
    // UE 1 has no LoS link anywhere.
    const auto ue = solve_power(PowerControlMode::PerUE, Scheme::StatisticalNoDL, s, 0.0, 1.0);
    EXPECT_EQ(ue.warnings.size(), 1u);
    EXPECT_THROW(solve_power(PowerControlMode::PerAP, Scheme::AccurateCSI, s, 0.0, 0.0), std::invalid_argument);
}

TEST(PowerControl, AllocationCsv)
{
    PowerAllocation a{RealMatrix(2, 2, 0.5), {}, {}, 0.0};
    a.x(1, 1) = 0.25;
    std::ostringstream out;
    write_allocation_csv(out, a);
    EXPECT_EQ(out.str(), "ap,ue0,ue1\n0,0.5,0.5\n1,0.5,0.25\n");
}

TEST(Precoders, FullSchemesCoincideWithStatisticalForPureLos)
{
    auto s0 = random_stats(3, 2, 2, 5);
    const LinkStatistics s(RealMatrix(3, 2, 1.0), RealMatrix(3, 2), s0.los_vectors());
    Rng rng = make_rng(6);
    auto r = sample_realization(s, rng);
    estimate_uplink(r, s, 0.1, rng);
    const PowerAllocation alloc{RealMatrix(3, 2, 0.9), {}, {}, 0.0};
    const auto a = build_precoders(Scheme::AccurateCSI, r, s, alloc);
    const auto e = build_precoders(Scheme::EstimatedCSI, r, s, alloc);
    const auto t = build_precoders(Scheme::StatisticalNoDL, r, s, alloc);
    EXPECT_EQ(a.columns, t.columns);
    EXPECT_EQ(e.columns, t.columns);
}

TEST(Precoders, EstimatedNeedsEstimates)
{
    const auto s = random_stats(3, 2, 1, 1);
    Rng rng = make_rng(1);
    const auto r = sample_realization(s, rng);
    const PowerAllocation alloc{RealMatrix(3, 2, 1.0), {}, {}, 0.0};
    EXPECT_THROW(build_precoders(Scheme::EstimatedCSI, r, s, alloc), std::invalid_argument);
}

TEST(EffectiveChannels, ScalarCaseByHand)
{
    LinkVectors los(1, 1, 1);
    los(0, 0)[0] = cplx(0.6, 0.8);
    const LinkStatistics s(RealMatrix(1, 1, 1.0), RealMatrix(1, 1, 0.25), los);
    ChannelRealization r;
    r.alpha = Matrix<std::uint8_t>(1, 1, 1);
    r.nlos = LinkVectors(1, 1, 1);
    r.nlos(0, 0)[0] = cplx(2.0, -1.0);
    const PowerAllocation alloc{RealMatrix(1, 1, 3.0), {}, {}, 0.0};
    const cplx h = cplx(0.6, 0.8) + 0.5 * cplx(2.0, -1.0);
    const auto acc = effective_channels(r, s, build_precoders(Scheme::AccurateCSI, r, s, alloc), alloc);
    EXPECT_NEAR(std::abs(acc.gamma(0, 0) - 3.0 * std::norm(h)), 0.0, 1e-14);
    EXPECT_NEAR(std::abs(acc.gamma_dot[0] - 3.0), 0.0, 1e-14);
    const auto st = effective_channels(r, s, build_precoders(Scheme::StatisticalNoDL, r, s, alloc), alloc);
    EXPECT_NEAR(std::abs(st.gamma(0, 0) - 3.0 * h * cplx(0.6, -0.8)), 0.0, 1e-14);
    EXPECT_NEAR(std::abs(st.gamma_bar[0] - 3.0 * 0.5 * cplx(2.0, -1.0) * cplx(0.6, -0.8)), 0.0, 1e-14);
}

TEST(EffectiveChannels, RadiatedPowerMatchesSampledTransmitPower)
{
    const auto s = random_stats(4, 3, 2, 12);
    const double su2 = 0.3 * s.beta(0, 0);
    Rng rng = make_rng(13);
    const std::size_t trials = 40000;
    for (auto scheme : {Scheme::AccurateCSI, Scheme::EstimatedCSI, Scheme::StatisticalNoDL}) {
        const auto alloc = solve_power(PowerControlMode::PerAP, scheme, s, su2, 1.0);
        std::vector<double> total(trials);
        for (std::size_t t = 0; t < trials; ++t) {
            auto r = sample_realization(s, rng);
            estimate_uplink(r, s, su2, rng);
            const auto p = build_precoders(scheme, r, s, alloc);
            double acc = 0.0;
            for (std::size_t m = 0; m < 4; ++m)
                for (std::size_t k = 0; k < 3; ++k)
                    acc += squared_norm(p.columns(m, k));
            total[t] = acc;
        }
        const auto e = mean_and_stderr(total);
        EXPECT_NEAR(e.mean, alloc.radiated_power, 0.01 * alloc.radiated_power) << to_string(scheme);
        EXPECT_NEAR(alloc.radiated_power, 4.0 - static_cast<double>(alloc.silent_aps.size()), 1e-12);
    }
}

TEST(EffectiveChannels, MeanDesiredGainForAccurateCsi)
{
    // E[gamma_kk] = sum_m x_mk (q zeta + N beta) for accurate CSI.
    const auto s = random_stats(3, 2, 2, 21);
    const auto alloc = solve_power(PowerControlMode::PerUE, Scheme::AccurateCSI, s, 0.0, 1.0);
    double expected = 0.0;
    for (std::size_t m = 0; m < 3; ++m)
        expected += alloc.x(m, 0) * expected_stream_power(Scheme::AccurateCSI, s, 0.0, m, 0);
    Rng rng = make_rng(22);
    const std::size_t trials = 40000;
    std::vector<double> g(trials);
    for (std::size_t t = 0; t < trials; ++t) {
        const auto r = sample_realization(s, rng);
        const auto e = effective_channels(r, s, build_precoders(Scheme::AccurateCSI, r, s, alloc), alloc);
        EXPECT_NEAR(e.gamma(0, 0).imag(), 0.0, 1e-9 * std::abs(e.gamma(0, 0)));
        g[t] = e.gamma(0, 0).real();
    }
    const auto est = mean_and_stderr(g);
    EXPECT_NEAR(est.mean, expected, 4.0 * est.stderr_);
}
