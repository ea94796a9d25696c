// SPDX-License-Identifier: Apache-2.0
//
// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include "cfmimo/cfmimo.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

using namespace cfmimo;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args)
{
    char buf[1024];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ------------------------------------------------------------------------
// 1. Closed-form moments against the brute-force oracle

Outcome moment_oracle()
{
    const std::size_t instances = 20, trials = 1000000;
    const auto rep = run_validation(instances, trials, 1, 0);
    std::size_t worst_idx = 0;
    double worst_z = 0.0;
    for (std::size_t i = 0; i < rep.checks.size(); ++i) {
        if (rep.checks[i].field.z() > worst_z) {
            worst_z = rep.checks[i].field.z();
            worst_idx = i;
        }
    }
    std::string detail = fmt("%zu instances x 4 schemes, %zu draws each; %zu fields, %zu failures; "
                             "strict 3-sigma exceedances %zu (chance expectation %.1f)",
                             instances, trials, rep.checks.size(), rep.failures(), rep.strict_exceedances(),
                             0.0027 * static_cast<double>(rep.random_fields()));
    if (!rep.checks.empty()) {
        const auto& w = rep.checks[worst_idx];
        detail += fmt("; largest z %.2f (%s %s, rel diff %.2e)", worst_z, std::string(to_string(w.scheme)).c_str(),
                      w.field.field.c_str(), w.field.rel_diff());
    }
    // Diagnostic only: failing fields are re-measured with ten times the draws on
    // an independent stream. The verdict above is not revised.
    for (const auto& c : rep.checks) {
        if (c.pass)
            continue;
        const auto inst = make_validation_instance(1, c.instance);
        const auto alloc = solve_power(inst.mode, c.scheme, inst.stats, inst.sigma_u2, 1.0);
        const auto closed = closed_form_moments(c.scheme, inst.stats, alloc, inst.sigma_u2, inst.sigma_d2);
        Rng rng = make_rng(2, 0x666f6c6c6f77ULL, c.instance, static_cast<std::uint64_t>(c.scheme));
        const auto o = oracle_moments(c.scheme, inst.stats, alloc, inst.sigma_u2, inst.sigma_d2, 10 * trials, rng);
        for (const auto& f : compare_moments(closed, o))
            if (f.field == c.field.field && f.k == c.field.k && f.i == c.field.i)
                detail += fmt("; follow-up on failing field (instance %zu, %s %s(%zu,%zu)) at %zu draws: z %.2f, "
                              "rel diff %.2e",
                              c.instance, std::string(to_string(c.scheme)).c_str(), f.field.c_str(), f.k, f.i,
                              10 * trials, f.z(), f.rel_diff());
    }
    return {rep.failures() == 0, detail};
}

// ------------------------------------------------------------------------
// 2 and 3. LoS-link PMF, silent APs and radiated power

ExperimentResult los_run()
{
    static const ExperimentResult res = run_los_pmf(
        ExperimentSpec::from_text("kind = los_pmf\npreset = paper\nsweep = 128, 1024\ndrops = 200\n"), 0);
    return res;
}

Outcome los_pmf_endpoints()
{
    const auto res = los_run();
    const double p128 = res.row(128, "none", "none", "pmf_0").value;
    const double p1024 = res.row(1024, "none", "none", "pmf_0").value;
    const bool ok = std::abs(p128 - 0.60) <= 0.05 && std::abs(p1024 - 0.02) <= 0.01;
    return {ok, fmt("P(no LoS link) = %.4f at M=128 (target 0.60 +- 0.05), %.4f at M=1024 (target 0.02 +- 0.01); "
                    "K=64, 200 drops",
                    p128, p1024)};
}

Outcome silent_aps()
{
    const auto res = los_run();
    const double silent = res.row(1024, "per_ap", "statistical_no_dl", "silent_ap_fraction").value;
    const double radiated = res.row(1024, "per_ap", "statistical_no_dl", "radiated_power_fraction").value;
    const bool ok = std::abs(silent - 0.76) <= 0.04 && std::abs(radiated - 0.24) <= 0.04;
    return {ok, fmt("silent-AP fraction %.4f (target 0.76 +- 0.04), radiated-power fraction %.4f "
                    "(target 0.24 +- 0.04); M=1024, K=64, per-AP",
                    silent, radiated)};
}

// ------------------------------------------------------------------------
// 4. Jensen dominance in every run that produces Monte-Carlo rates

Outcome jensen()
{
    std::size_t comparisons = 0, violations = 0;
    double worst = -INFINITY;
    auto check = [&](double bound, const Estimate& mc) {
        ++comparisons;
        if (mc.stderr_ > 0.0)
            worst = std::max(worst, (mc.mean - bound) / mc.stderr_);
        if (!detail::jensen_ok(bound, mc))
            ++violations;
    };

    const auto spec = ExperimentSpec::from_text("kind = rate_vs_snr\npreset = desk\nalpha_mode = per_realization\n"
                                                "sweep = 60, 100\npower_mode = per_ap, per_ue\ndrops = 10\n"
                                                "trials_per_drop = 100\n");
    const auto res = run_rate_vs_snr(spec, 0);
    for (const auto& u : res.users)
        check(u.bound, u.mc);

    for (std::size_t idx = 0; idx < 20; ++idx) {
        const auto inst = make_validation_instance(1, idx);
        for (auto scheme : all_schemes) {
            const auto alloc = solve_power(inst.mode, scheme, inst.stats, inst.sigma_u2, 1.0);
            const auto ms = closed_form_moments(scheme, inst.stats, alloc, inst.sigma_u2, inst.sigma_d2);
            for (double rel_noise : {1e-3, 1e-1, 10.0}) {
                const double so2 = rel_noise * ms.e_gkk2[0];
                Rng rng = make_rng(1, 0x4a454e53ULL, idx, static_cast<std::uint64_t>(scheme));
                const auto mc = mc_rate(scheme, rng, inst.stats, alloc, ms, so2, inst.sigma_u2, inst.sigma_d2, 2000);
                const auto bound = rate_bound(scheme, ms, so2);
                for (std::size_t k = 0; k < bound.size(); ++k)
                    check(bound[k], mc[k]);
            }
        }
    }
    return {violations == 0,
            fmt("%zu (scheme, user) comparisons: desk run (M=256, K=16, both power modes, 10 drops x 100 trial pairs, "
                "LoS state drawn per trial) plus 20 small instances at 3 noise levels; %zu violations; "
                "largest (mc - bound)/stderr = %.2f",
                comparisons, violations, worst)};
}

// ------------------------------------------------------------------------
// 5. Noiseless uplink training reproduces accurate CSI

Outcome noiseless_limit()
{
    double worst = 0.0;
    auto rel = [&](double a, double b) {
        const double s = std::max(std::abs(a), std::abs(b));
        if (s > 0.0)
            worst = std::max(worst, std::abs(a - b) / s);
    };
    for (std::size_t idx = 0; idx < 10; ++idx) {
        const auto inst = make_validation_instance(5, idx);
        const auto alloc = solve_power(inst.mode, Scheme::AccurateCSI, inst.stats, 0.0, 1.0);
        const auto e = moments_estimated(inst.stats, alloc, 0.0, 0.0);
        const auto a = moments_accurate(inst.stats, alloc);
        for (std::size_t k = 0; k < a.num_ues(); ++k) {
            rel(e.e_gkk2[k], a.e_gkk2[k]);
            rel(e.e_gdot2[k], a.e_gdot2[k]);
            rel(e.e_gbar2[k], a.e_gbar2[k]);
            rel(e.e_ghat2[k], a.e_ghat2[k]);
            rel(e.e_gtilde2[k], a.e_gtilde2[k]);
            rel(e.e_dot_bar[k], a.e_dot_bar[k]);
            rel(e.e_dot_hat[k], a.e_dot_hat[k]);
            for (std::size_t i = 0; i < a.num_ues(); ++i)
                rel(e.e_gki2(k, i), a.e_gki2(k, i));
        }
    }
    return {worst <= 1e-12, fmt("10 instances, largest relative field difference %.2e (limit 1e-12)", worst)};
}

// ------------------------------------------------------------------------
// 6. Orderings at desk scale

Outcome orderings()
{
    const auto snr = run_rate_vs_snr(ExperimentSpec::from_text("kind = rate_vs_snr\npreset = desk\npower_mode = per_ue\n"
                                                               "drops = 50\nmc_rates = false\n"),
                                     0);
    const auto& sweep = snr.spec.sweep;
    const double hi = sweep.back(), lo = sweep[sweep.size() - 2];
    auto rate = [&](double s, const char* scheme) { return snr.row(s, "per_ue", scheme, "bound_mean").value; };
    const double acc = rate(hi, "accurate_csi"), est = rate(hi, "estimated_csi");
    const double nodl = rate(hi, "statistical_no_dl"), wdl = rate(hi, "statistical_with_dl");
    const bool a = std::min(nodl, wdl) > std::max(acc, est);

    const auto den = run_rate_vs_density(ExperimentSpec::from_text(
                                             "kind = rate_vs_density\npreset = desk\nsweep = 128\ndrops = 50\n"
                                             "schemes = estimated_csi, statistical_no_dl\nmc_rates = false\n"),
                                         0);
    const double d_est = den.row(128, "per_ap", "estimated_csi", "bound_mean").value;
    const double d_nodl = den.row(128, "per_ap", "statistical_no_dl", "bound_mean").value;
    const bool b = d_nodl < d_est;

    const double inc_est = est - rate(lo, "estimated_csi");
    const double inc_nodl = nodl - rate(lo, "statistical_no_dl");
    const double inc_wdl = wdl - rate(lo, "statistical_with_dl");
    const bool c = inc_est < 0.1 && inc_nodl < 0.1 && inc_wdl > 0.5;

    return {a && b && c,
            fmt("(a) %s per-UE %g dB: accurate %.2f, estimated %.2f < no-DL %.2f, with-DL %.2f bit; "
                "(b) %s per-AP M=128: no-DL %.2f < estimated %.2f bit; "
                "(c) %s %g->%g dB: estimated %+.3f, no-DL %+.3f (< 0.1), with-DL %+.3f (> 0.5) bit; "
                "M=256, K=16, 50 drops",
                a ? "ok" : "FAILED", hi, acc, est, nodl, wdl, b ? "ok" : "FAILED", d_nodl, d_est, c ? "ok" : "FAILED",
                lo, hi, inc_est, inc_nodl, inc_wdl)};
}

// ------------------------------------------------------------------------
// 7. Estimator orthogonality and variance identities

Outcome estimators()
{
    const std::size_t n = 100000;
    Rng rng = make_rng(7, 1);
    std::vector<double> ul_re(n), ul_im(n), dl_re(n), dl_im(n);
    const double beta = 0.6, su2 = 0.4, g = 1.7, sd2 = 0.9;
    for (std::size_t t = 0; t < n; ++t) {
        const cplx h = complex_normal(rng);
        const cplx y = std::sqrt(beta) * h + std::sqrt(su2) * complex_normal(rng);
        const cplx est = uplink_lmmse(std::span<const cplx>(&y, 1), beta, su2).est[0];
        const cplx c = est * std::conj(h - est);
        ul_re[t] = c.real();
        ul_im[t] = c.imag();
        const cplx bar = std::sqrt(g) * complex_normal(rng);
        const cplx hat = downlink_lmmse(bar + std::sqrt(sd2) * complex_normal(rng), g, sd2).gamma_hat;
        const cplx d = hat * std::conj(bar - hat);
        dl_re[t] = d.real();
        dl_im[t] = d.imag();
    }
    double worst_z = 0.0;
    for (const auto* v : {&ul_re, &ul_im, &dl_re, &dl_im}) {
        const auto e = mean_and_stderr(*v);
        worst_z = std::max(worst_z, std::abs(e.mean) / e.stderr_);
    }

    double worst_id = 0.0;
    for (double b : {1e-13, 1e-6, 0.3, 1.0, 40.0}) {
        for (double s : {0.0, 1e-12, 1e-3, 0.5, 2.0, 1e6}) {
            const auto u = uplink_lmmse(std::vector<cplx>(2, cplx(1.0, -1.0)), b, s);
            worst_id = std::max(worst_id, std::abs(u.est_var + u.err_var - 1.0));
            const auto d = downlink_lmmse(cplx(0.3, 0.1), b, s);
            worst_id = std::max(worst_id, std::abs(d.hat_var + d.tilde_var - b) / b);
        }
    }
    for (std::size_t idx = 0; idx < 10; ++idx) {
        const auto inst = make_validation_instance(7, idx);
        for (auto scheme : {Scheme::EstimatedCSI, Scheme::StatisticalWithDL}) {
            const auto alloc = solve_power(inst.mode, scheme, inst.stats, inst.sigma_u2, 1.0);
            const auto ms = closed_form_moments(scheme, inst.stats, alloc, inst.sigma_u2, inst.sigma_d2);
            for (std::size_t k = 0; k < ms.num_ues(); ++k) {
                worst_id = std::max(worst_id, std::abs(ms.e_ghat2[k] + ms.e_gtilde2[k] - ms.e_gbar2[k]) / ms.e_gbar2[k]);
                const double whole = ms.e_gdot2[k] + ms.e_gbar2[k] + 2.0 * ms.e_dot_bar[k];
                worst_id = std::max(worst_id, std::abs(whole - ms.e_gkk2[k]) / ms.e_gkk2[k]);
            }
        }
    }
    const bool ok = worst_z < 3.0 && worst_id <= 1e-12;
    return {ok, fmt("uplink/downlink estimate-error correlation at %zu draws: largest |mean|/stderr %.2f (< 3); "
                    "largest variance-identity residual %.2e (<= 1e-12)",
                    n, worst_z, worst_id)};
}

// ------------------------------------------------------------------------
// 8. Worker count does not change the output bytes

std::string read_file(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Outcome determinism()
{
    const auto root = std::filesystem::temp_directory_path() / "cfmimo_acceptance_determinism";
    std::filesystem::remove_all(root);
    const char* specs[] = {
        "kind = rate_vs_snr\nnum_aps = 64\nnum_ues = 8\nsweep = 60, 100\npower_mode = per_ap, per_ue\n"
        "drops = 8\ntrials_per_drop = 30\nseed = 11\n",
        "kind = rate_cdf\nnum_aps = 64\nnum_ues = 8\ndrops = 8\ntrials_per_drop = 30\n"
        "alpha_mode = per_realization\nseed = 12\n",
        "kind = rate_vs_density\nnum_ues = 8\nsweep = 32, 64\ndrops = 6\ntrials_per_drop = 20\nseed = 13\n",
        "kind = los_pmf\nnum_ues = 16\nsweep = 128, 256\ndrops = 20\nseed = 14\n",
    };
    std::size_t files = 0, identical = 0, bytes = 0;
    for (const char* text : specs) {
        const auto spec = ExperimentSpec::from_text(text);
        const auto one = emit(run_experiment(spec, 1), root / "w1", {"csv"});
        const auto eight = emit(run_experiment(spec, 8), root / "w8", {"csv"});
        const auto a = read_file(one.front()), b = read_file(eight.front());
        ++files;
        bytes += a.size();
        identical += (a == b && !a.empty()) ? 1 : 0;
    }
    std::filesystem::remove_all(root);
    return {identical == files, fmt("%zu/%zu experiment CSVs byte-identical between 1 and 8 workers (%zu bytes)",
                                    identical, files, bytes)};
}

// ------------------------------------------------------------------------
// 9. erf accuracy

Outcome erf_accuracy()
{
    double worst = 0.0, at = 0.0;
    for (int i = 0; i <= 800; ++i) {
        const double z = -4.0 + 0.01 * i;
        const double e = std::abs(cfmimo::erf(z) - oracle::erf_series_cf(z));
        if (e > worst) {
            worst = e;
            at = z;
        }
    }
    return {worst <= 1e-6, fmt("801-point grid on [-4, 4]: largest error %.2e at z = %.2f (limit 1e-6)", worst, at)};
}

} // namespace

int main()
{
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"moment-oracle equivalence", moment_oracle},
        {"LoS PMF endpoints", los_pmf_endpoints},
        {"silent APs and radiated power", silent_aps},
        {"Jensen dominance", jensen},
        {"noiseless-training limit", noiseless_limit},
        {"desk-scale orderings", orderings},
        {"estimator properties", estimators},
        {"determinism across worker counts", determinism},
        {"erf accuracy", erf_accuracy},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s %zu %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str(),
                    secs);
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
