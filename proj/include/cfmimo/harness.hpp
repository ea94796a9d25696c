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

#ifndef CFMIMO_HARNESS_HPP
#define CFMIMO_HARNESS_HPP

#include "analysis.hpp"

#include <atomic>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace cfmimo {

// ------------------------------------------------------------------------
// Experiment description

enum class ExperimentKind { LosPmf, RateVsSnr, RateCdf, RateVsDensity };
enum class AlphaMode { PerDrop, PerRealization };
enum class PilotNoise { Fixed, TrackData };

inline std::string_view to_string(ExperimentKind k)
{
    switch (k) {
    case ExperimentKind::LosPmf: return "los_pmf";
    case ExperimentKind::RateVsSnr: return "rate_vs_snr";
    case ExperimentKind::RateCdf: return "rate_cdf";
    case ExperimentKind::RateVsDensity: return "rate_vs_density";
    }
    return "?";
}

inline ExperimentKind parse_kind(std::string_view s)
{
    for (auto k : {ExperimentKind::LosPmf, ExperimentKind::RateVsSnr, ExperimentKind::RateCdf,
                   ExperimentKind::RateVsDensity})
        if (to_string(k) == s)
            return k;
    throw config_error("unknown experiment kind '" + std::string(s) + "'");
}

inline std::string_view to_string(AlphaMode a) { return a == AlphaMode::PerDrop ? "per_drop" : "per_realization"; }

inline AlphaMode parse_alpha_mode(std::string_view s)
{
    if (s == "per_drop") return AlphaMode::PerDrop;
    if (s == "per_realization") return AlphaMode::PerRealization;
    throw config_error("unknown alpha_mode '" + std::string(s) + "'");
}

inline std::string_view to_string(PilotNoise p) { return p == PilotNoise::Fixed ? "fixed" : "track_data"; }

inline PilotNoise parse_pilot_noise(std::string_view s)
{
    if (s == "fixed") return PilotNoise::Fixed;
    if (s == "track_data") return PilotNoise::TrackData;
    throw config_error("unknown pilot_noise '" + std::string(s) + "'");
}

inline std::vector<std::string> split_list(std::string_view s)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto end = std::min(s.find(',', start), s.size());
        auto item = trim(s.substr(start, end - start));
        if (!item.empty())
            out.push_back(std::move(item));
        start = end + 1;
    }
    return out;
}

inline bool parse_bool(const std::string& key, std::string_view v)
{
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw config_error("invalid boolean for '" + key + "': '" + std::string(v) + "'");
}

inline std::string format_number(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// Everything that determines an experiment's output, except the worker count.
struct ExperimentSpec {
    ExperimentKind kind = ExperimentKind::RateVsSnr;
    NetworkConfig config;
    std::vector<Scheme> schemes{all_schemes.begin(), all_schemes.end()};
    std::vector<PowerControlMode> power_modes{PowerControlMode::PerAP};
    PowerSplit power_split = PowerSplit::EqualCoefficient;
    std::vector<double> sweep;     // SNR in dB (rate_vs_snr) or AP counts (other kinds)
    double snr_db = 100.0;         // data SNR for kinds that sweep AP counts
    std::size_t drops = 100;
    std::size_t trials_per_drop = 200;
    AlphaMode alpha_mode = AlphaMode::PerDrop;
    std::uint64_t seed = 1;
    PilotNoise pilot_noise = PilotNoise::TrackData;
    double log_base = 2.0;
    bool mc_rates = true;
    bool antithetic = true;
    bool instantaneous_sinr = false; // deviation mode, off by default
    std::string preset;              // informational once applied

    /// Default sweep when the spec leaves it out.
    static std::vector<double> default_sweep(ExperimentKind kind, const NetworkConfig& cfg)
    {
        switch (kind) {
        case ExperimentKind::RateVsSnr: return {40, 50, 60, 70, 80, 90, 100, 110, 120};
        case ExperimentKind::RateCdf: return {static_cast<double>(cfg.num_aps)};
        case ExperimentKind::LosPmf:
        case ExperimentKind::RateVsDensity: return {128, 256, 512, 1024, 2048};
        }
        return {};
    }

    /// Applies one experiment key. Returns false for keys it does not own.
    bool apply(const std::string& key, const std::string& value)
    {
        if (key == "kind") {
            kind = parse_kind(value);
        } else if (key == "schemes") {
            schemes.clear();
            for (const auto& s : split_list(value))
                schemes.push_back(parse_scheme(s));
        } else if (key == "power_mode") {
            power_modes.clear();
            for (const auto& s : split_list(value))
                power_modes.push_back(parse_power_mode(s));
        } else if (key == "power_split") {
            power_split = parse_power_split(value);
        } else if (key == "sweep") {
            sweep.clear();
            for (const auto& s : split_list(value))
                sweep.push_back(parse_double(key, s));
            if (sweep.empty())
                throw config_error("sweep must not be empty");
        } else if (key == "snr_db") {
            snr_db = parse_double(key, value);
        } else if (key == "drops") {
            drops = parse_count(key, value);
        } else if (key == "trials_per_drop") {
            trials_per_drop = parse_count(key, value);
        } else if (key == "alpha_mode") {
            alpha_mode = parse_alpha_mode(value);
        } else if (key == "seed") {
            seed = parse_count(key, value);
        } else if (key == "pilot_noise") {
            pilot_noise = parse_pilot_noise(value);
        } else if (key == "log_base") {
            log_base = parse_double(key, value);
        } else if (key == "mc_rates") {
            mc_rates = parse_bool(key, value);
        } else if (key == "antithetic") {
            antithetic = parse_bool(key, value);
        } else if (key == "sinr_mode") {
            if (value == "expected") instantaneous_sinr = false;
            else if (value == "instantaneous") instantaneous_sinr = true;
            else throw config_error("unknown sinr_mode '" + value + "'");
        } else {
            return false;
        }
        return true;
    }

    void apply_preset(std::string_view name)
    {
        if (name == "paper") {
            config.num_aps = 1024;
            config.num_ues = 64;
        } else if (name == "desk") {
            config.num_aps = 256;
            config.num_ues = 16;
        } else {
            throw config_error("unknown preset '" + std::string(name) + "'");
        }
        drops = 100;
        trials_per_drop = 200;
        preset = std::string(name);
    }

    void validate() const
    {
        config.validate();
        if (sweep.empty())
            throw config_error("sweep must not be empty");
        if (drops == 0)
            throw config_error("drops must be at least 1");
        if (trials_per_drop == 0)
            throw config_error("trials_per_drop must be at least 1");
        if (schemes.empty())
            throw config_error("schemes must not be empty");
        if (power_modes.empty())
            throw config_error("power_mode must not be empty");
        if (!(log_base > 0.0) || log_base == 1.0)
            throw config_error("log_base must be positive and not 1");
        if (kind != ExperimentKind::RateVsSnr) {
            for (double m : sweep) {
                if (!(m >= 1.0) || m != std::floor(m))
                    throw config_error("sweep values must be AP counts for " + std::string(to_string(kind)));
                if (static_cast<std::size_t>(m) * config.antennas_per_ap <= config.num_ues)
                    throw config_error("num_aps * antennas_per_ap must exceed num_ues at every sweep point");
            }
        }
    }

    /// Parses spec text (scenario keys plus experiment keys). A `preset` key,
    /// or `preset_override`, is applied first; explicit keys then win.
    static ExperimentSpec from_key_values(const std::vector<KeyValue>& kvs, std::optional<ExperimentKind> kind = {},
                                          std::string_view preset_override = {})
    {
        ExperimentSpec s;
        std::string preset(preset_override);
        for (const auto& kv : kvs)
            if (kv.key == "preset" && preset.empty())
                preset = kv.value;
        if (!preset.empty())
            s.apply_preset(preset);
        for (const auto& kv : kvs) {
            if (kv.key == "preset")
                continue;
            if (!s.apply(kv.key, kv.value) && !s.config.apply(kv.key, kv.value))
                throw config_error("line " + std::to_string(kv.line) + ": unknown key '" + kv.key + "'");
        }
        if (kind)
            s.kind = *kind;
        if (s.sweep.empty())
            s.sweep = default_sweep(s.kind, s.config);
        s.validate();
        return s;
    }

    static ExperimentSpec from_text(std::string_view text, std::optional<ExperimentKind> kind = {},
                                    std::string_view preset_override = {})
    {
        return from_key_values(parse_key_values(text), kind, preset_override);
    }

    static ExperimentSpec from_file(const std::string& path, std::optional<ExperimentKind> kind = {},
                                    std::string_view preset_override = {})
    {
        std::ifstream in(path);
        if (!in)
            throw config_error("cannot open spec file '" + path + "'");
        return from_key_values(parse_key_values(in), kind, preset_override);
    }

    /// Every resolved setting as key=value lines in a fixed order. The seed is
    /// left out so that it can appear separately in file names.
    std::string canonical() const
    {
        std::ostringstream o;
        const auto& c = config;
        auto line = [&](std::string_view k, const std::string& v) { o << k << '=' << v << '\n'; };
        auto num = [](double v) { return format_number(v); };
        line("kind", std::string(to_string(kind)));
        line("num_aps", std::to_string(c.num_aps));
        line("antennas_per_ap", std::to_string(c.antennas_per_ap));
        line("num_ues", std::to_string(c.num_ues));
        line("area_side", num(c.area_side));
        line("ap_height", num(c.ap_height));
        line("ue_height", num(c.ue_height));
        line("carrier_freq", num(c.carrier_freq));
        line("antenna_spacing", num(c.spacing()));
        line("ap_gain", num(c.ap_gain));
        line("ue_gain", num(c.ue_gain));
        line("built_fraction", num(c.built_fraction));
        line("blockage_density", num(c.blockage_density));
        line("avg_blockage_height", num(c.avg_blockage_height));
        line("noise_ul", num(c.noise_ul));
        line("noise_dl", num(c.noise_dl));
        line("noise_data", num(c.noise_data));
        line("pathloss_exponent", num(c.pathloss_exponent));
        line("pathloss_ref_distance", num(c.pathloss_ref_distance));
        line("power_budget", num(c.power_budget));
        line("shadowing_std_db", num(c.shadowing_std_db));
        std::string list;
        for (auto sc : schemes)
            list += (list.empty() ? "" : ",") + std::string(to_string(sc));
        line("schemes", list);
        list.clear();
        for (auto pm : power_modes)
            list += (list.empty() ? "" : ",") + std::string(to_string(pm));
        line("power_mode", list);
        line("power_split", std::string(to_string(power_split)));
        list.clear();
        for (double v : sweep)
            list += (list.empty() ? "" : ",") + num(v);
        line("sweep", list);
        line("snr_db", num(snr_db));
        line("drops", std::to_string(drops));
        line("trials_per_drop", std::to_string(trials_per_drop));
        line("alpha_mode", std::string(to_string(alpha_mode)));
        line("pilot_noise", std::string(to_string(pilot_noise)));
        line("log_base", num(log_base));
        line("mc_rates", mc_rates ? "true" : "false");
        line("antithetic", antithetic ? "true" : "false");
        line("sinr_mode", instantaneous_sinr ? "instantaneous" : "expected");
        return o.str();
    }

    /// 64-bit FNV-1a of canonical().
    std::uint64_t hash() const
    {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char ch : canonical()) {
            h ^= ch;
            h *= 0x100000001b3ULL;
        }
        return h;
    }
};

/// Noise powers of one SNR point.
struct NoiseLevels {
    double sigma_o2 = 0.0;
    double sigma_u2 = 0.0;
    double sigma_d2 = 0.0;
};

/// Data SNR in dB maps to sigma_o^2 = 1 / SNR. Pilot noise either follows it
/// or stays at the configured noise_ul / noise_dl.
inline NoiseLevels noise_for_snr(const ExperimentSpec& spec, double snr_db)
{
    const double so2 = 1.0 / db_to_linear(snr_db);
    if (spec.pilot_noise == PilotNoise::TrackData)
        return {so2, so2, so2};
    return {so2, spec.config.noise_ul, spec.config.noise_dl};
}

/// Per-AP budget E_a = power_budget; per-UE budget E_u = E_a * M / K, so the
/// total across constraint groups is the same in both modes.
inline double budget_for(PowerControlMode mode, const NetworkConfig& cfg)
{
    return mode == PowerControlMode::PerAP
               ? cfg.power_budget
               : cfg.power_budget * static_cast<double>(cfg.num_aps) / static_cast<double>(cfg.num_ues);
}

// ------------------------------------------------------------------------
// Results

/// One CSV row: kind,sweep,power_mode,scheme,statistic,value,stderr.
struct ResultRow {
    std::string kind;
    double sweep = 0.0;
    std::string power_mode;
    std::string scheme;
    std::string statistic;
    double value = 0.0;
    double stderr_ = 0.0;
    bool operator==(const ResultRow&) const = default;
};

/// Per-user outcome of one drop, kept in memory for checks and CDFs.
struct UserRate {
    double sweep = 0.0;
    PowerControlMode mode = PowerControlMode::PerAP;
    Scheme scheme = Scheme::AccurateCSI;
    std::size_t drop = 0;
    std::size_t user = 0;
    double bound = 0.0;
    Estimate mc;
    bool has_mc = false;
};

struct ExperimentResult {
    ExperimentSpec spec;
    std::vector<ResultRow> rows;
    std::vector<UserRate> users;
    std::vector<std::string> warnings;

    /// First row matching the selector; throws if missing.
    const ResultRow& row(double sweep, std::string_view mode, std::string_view scheme,
                         std::string_view statistic) const
    {
        for (const auto& r : rows)
            if (r.sweep == sweep && r.power_mode == mode && r.scheme == scheme && r.statistic == statistic)
                return r;
        throw std::out_of_range("no result row for " + std::string(scheme) + "/" + std::string(statistic));
    }
};

/// Runs f(0..n-1) on up to `workers` threads (0 = hardware concurrency).
/// Each index must write only its own output slot.
template <typename F>
void parallel_for(std::size_t n, std::size_t workers, F&& f)
{
    if (workers == 0)
        workers = std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n)
                    return;
                try {
                    f(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error)
                        error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool)
        t.join();
    if (error)
        std::rethrow_exception(error);
}

namespace detail {

// Stream tags keep the random streams of different pipeline stages apart.
enum : std::uint64_t { tag_deploy = 1, tag_alpha = 2, tag_mc = 3 };

inline std::uint64_t stream_id(std::uint64_t tag, std::uint64_t group) { return (tag << 32) | group; }

inline std::uint64_t deploy_seed(const ExperimentSpec& s, std::size_t group, std::size_t drop)
{
    Rng r = make_rng(s.seed, stream_id(tag_deploy, group), drop);
    return r();
}

/// LoS indicators for one drop, alpha ~ Bernoulli(q).
inline RealMatrix draw_alpha(const RealMatrix& q, Rng& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    RealMatrix a(q.rows(), q.cols());
    for (std::size_t m = 0; m < q.rows(); ++m)
        for (std::size_t k = 0; k < q.cols(); ++k)
            a(m, k) = u(rng) < q(m, k) ? 1.0 : 0.0;
    return a;
}

/// Link statistics of one drop, conditioned on the drop's LoS state in per_drop mode.
inline LinkStatistics drop_statistics(const ExperimentSpec& s, const NetworkConfig& cfg, std::size_t group,
                                      std::size_t drop)
{
    const Deployment d = deploy(cfg, deploy_seed(s, group, drop));
    LinkStatistics stats = LinkStatistics::from_deployment(d, cfg);
    if (s.alpha_mode == AlphaMode::PerDrop) {
        Rng rng = make_rng(s.seed, stream_id(tag_alpha, group), drop);
        stats = stats.with_los_probabilities(draw_alpha(stats.q(), rng));
    }
    return stats;
}

inline Estimate mean_over(const std::vector<double>& v) { return mean_and_stderr(v); }

} // namespace detail

// ------------------------------------------------------------------------
// LoS statistics

/// PMF of the number of LoS links per UE, plus the silent-AP and
/// radiated-power fractions of statistical beamforming under per-AP control.
inline ExperimentResult run_los_pmf(const ExperimentSpec& spec, std::size_t workers = 1)
{
    if (spec.kind != ExperimentKind::LosPmf)
        throw config_error("run_los_pmf needs kind = los_pmf");
    spec.validate();
    ExperimentResult res{spec, {}, {}, {}};
    const std::string kind(to_string(spec.kind));

    for (std::size_t g = 0; g < spec.sweep.size(); ++g) {
        NetworkConfig cfg = spec.config;
        cfg.num_aps = static_cast<std::size_t>(spec.sweep[g]);
        const std::size_t M = cfg.num_aps;
        const std::size_t K = cfg.num_ues;

        struct DropStats {
            std::vector<std::size_t> counts; // LoS links per UE
            double silent = 0.0;
            double radiated = 0.0;
        };
        std::vector<DropStats> per_drop(spec.drops);
        parallel_for(spec.drops, workers, [&](std::size_t drop) {
            const Deployment d = deploy(cfg, detail::deploy_seed(spec, g, drop));
            Rng rng = make_rng(spec.seed, detail::stream_id(detail::tag_alpha, g), drop);
            const RealMatrix alpha = detail::draw_alpha(d.los_prob, rng);
            DropStats ds;
            ds.counts.assign(K, 0);
            for (std::size_t m = 0; m < M; ++m)
                for (std::size_t k = 0; k < K; ++k)
                    ds.counts[k] += alpha(m, k) > 0.0 ? 1 : 0;
            const LinkStatistics stats = LinkStatistics::from_deployment(d, cfg).with_los_probabilities(alpha);
            const double budget = budget_for(PowerControlMode::PerAP, cfg);
            const auto alloc = solve_power(PowerControlMode::PerAP, Scheme::StatisticalNoDL, stats, 0.0, budget,
                                           spec.power_split);
            ds.silent = static_cast<double>(alloc.silent_aps.size()) / static_cast<double>(M);
            ds.radiated = alloc.radiated_power / (budget * static_cast<double>(M));
            per_drop[drop] = std::move(ds);
        });

        std::size_t max_count = 0;
        for (const auto& ds : per_drop)
            for (auto c : ds.counts)
                max_count = std::max(max_count, c);
        // Per-drop fractions give standard errors that respect within-drop correlation.
        for (std::size_t c = 0; c <= max_count; ++c) {
            std::vector<double> frac(spec.drops);
            for (std::size_t drop = 0; drop < spec.drops; ++drop) {
                const auto& counts = per_drop[drop].counts;
                frac[drop] = static_cast<double>(std::count(counts.begin(), counts.end(), c)) / static_cast<double>(K);
            }
            const auto e = mean_and_stderr(frac);
            res.rows.push_back({kind, spec.sweep[g], "none", "none", "pmf_" + std::to_string(c), e.mean, e.stderr_});
        }
        std::vector<double> mean_links(spec.drops), silent(spec.drops), radiated(spec.drops);
        for (std::size_t drop = 0; drop < spec.drops; ++drop) {
            double s = 0.0;
            for (auto c : per_drop[drop].counts)
                s += static_cast<double>(c);
            mean_links[drop] = s / static_cast<double>(K);
            silent[drop] = per_drop[drop].silent;
            radiated[drop] = per_drop[drop].radiated;
        }
        auto add = [&](const char* mode, const char* scheme, const char* stat, const std::vector<double>& v) {
            const auto e = mean_and_stderr(v);
            res.rows.push_back({kind, spec.sweep[g], mode, scheme, stat, e.mean, e.stderr_});
        };
        add("none", "none", "mean_los_links", mean_links);
        add("per_ap", "statistical_no_dl", "silent_ap_fraction", silent);
        add("per_ap", "statistical_no_dl", "radiated_power_fraction", radiated);
    }
    return res;
}

// ------------------------------------------------------------------------
// Rate experiments

/// Bounds and (optionally) Monte-Carlo rates of every user for one drop, for
/// all power modes, schemes and noise points. Output index:
/// ((mode * schemes + scheme) * points + point) * K + user.
struct DropRates {
    std::vector<double> bound;
    std::vector<Estimate> mc;
};

inline DropRates rate_drop(const ExperimentSpec& spec, const NetworkConfig& cfg, const std::vector<NoiseLevels>& points,
                           std::size_t group, std::size_t drop)
{
    const LinkStatistics stats = detail::drop_statistics(spec, cfg, group, drop);
    const std::size_t K = cfg.num_ues;
    const std::size_t P = points.size();
    const std::size_t S = spec.schemes.size();
    DropRates out;
    out.bound.assign(spec.power_modes.size() * S * P * K, 0.0);
    if (spec.mc_rates)
        out.mc.assign(out.bound.size(), Estimate{});
    const McOptions opt{spec.log_base, spec.antithetic, spec.instantaneous_sinr};

    for (std::size_t pm = 0; pm < spec.power_modes.size(); ++pm) {
        const auto mode = spec.power_modes[pm];
        const double budget = budget_for(mode, cfg);
        for (std::size_t si = 0; si < S; ++si) {
            const Scheme scheme = spec.schemes[si];
            const std::size_t base = (pm * S + si) * P * K;
            // Only the estimated-CSI precoder depends on sigma_u^2; points that
            // share sigma_u^2 share the allocation and the fading draws.
            const bool per_point = scheme == Scheme::EstimatedCSI;
            std::map<double, std::vector<std::size_t>> by_su;
            for (std::size_t p = 0; p < P; ++p)
                by_su[per_point ? points[p].sigma_u2 : 0.0].push_back(p);

            std::size_t group_index = 0;
            for (const auto& [su, idx] : by_su) {
                const double su2 = per_point ? su : points[idx.front()].sigma_u2;
                const auto alloc = solve_power(mode, scheme, stats, su2, budget, spec.power_split);
                std::vector<MomentSet> ms;
                for (auto p : idx) {
                    ms.push_back(closed_form_moments(scheme, stats, alloc, su2, points[p].sigma_d2));
                    const auto b = rate_bound(scheme, ms.back(), points[p].sigma_o2, spec.log_base);
                    std::copy(b.begin(), b.end(), out.bound.begin() + static_cast<std::ptrdiff_t>(base + p * K));
                }
                if (spec.mc_rates) {
                    Rng rng = make_rng(spec.seed, detail::stream_id(detail::tag_mc, group), drop,
                                       (pm << 24) | (static_cast<std::uint64_t>(scheme) << 16) | group_index);
                    const std::size_t T = spec.trials_per_drop;
                    std::vector<double> samples(idx.size() * K * T);
                    std::vector<double> buf(K);
                    for (std::size_t t = 0; t < T; ++t) {
                        const auto draws = draw_trial(scheme, stats, alloc, su2, spec.antithetic, rng);
                        for (std::size_t j = 0; j < idx.size(); ++j) {
                            const auto& nz = points[idx[j]];
                            for (const auto& d : draws) {
                                instantaneous_rates(scheme, d, ms[j], nz.sigma_o2, nz.sigma_d2, opt, buf);
                                for (std::size_t k = 0; k < K; ++k)
                                    samples[(j * K + k) * T + t] += buf[k] / static_cast<double>(draws.size());
                            }
                        }
                    }
                    for (std::size_t j = 0; j < idx.size(); ++j)
                        for (std::size_t k = 0; k < K; ++k)
                            out.mc[base + idx[j] * K + k] =
                                mean_and_stderr(std::span<const double>(samples).subspan((j * K + k) * T, T));
                }
                ++group_index;
            }
        }
    }
    return out;
}

namespace detail {

/// Jensen dominance with a small relative slack for rounding in the log terms.
inline bool jensen_ok(double bound, const Estimate& mc)
{
    return bound >= mc.mean - 3.0 * mc.stderr_ - 1e-12 * std::max(1.0, std::abs(bound));
}

/// Appends the per-user records and the drop-averaged summary rows of one sweep point.
inline void summarize_point(ExperimentResult& res, const std::vector<DropRates>& drops, double sweep_value,
                            std::size_t point, std::size_t num_points, std::size_t K, bool keep_users)
{
    const auto& spec = res.spec;
    const std::string kind(to_string(spec.kind));
    const std::size_t S = spec.schemes.size();
    for (std::size_t pm = 0; pm < spec.power_modes.size(); ++pm) {
        for (std::size_t si = 0; si < S; ++si) {
            const std::size_t base = ((pm * S + si) * num_points + point) * K;
            std::vector<double> bound_means(drops.size()), mc_means(drops.size());
            std::size_t violations = 0;
            for (std::size_t d = 0; d < drops.size(); ++d) {
                double b = 0.0, m = 0.0;
                for (std::size_t k = 0; k < K; ++k) {
                    b += drops[d].bound[base + k];
                    if (spec.mc_rates) {
                        const auto& e = drops[d].mc[base + k];
                        m += e.mean;
                        if (!jensen_ok(drops[d].bound[base + k], e))
                            ++violations;
                    }
                    if (keep_users) {
                        UserRate u;
                        u.sweep = sweep_value;
                        u.mode = spec.power_modes[pm];
                        u.scheme = spec.schemes[si];
                        u.drop = d;
                        u.user = k;
                        u.bound = drops[d].bound[base + k];
                        u.has_mc = spec.mc_rates;
                        if (spec.mc_rates)
                            u.mc = drops[d].mc[base + k];
                        res.users.push_back(u);
                    }
                }
                bound_means[d] = b / static_cast<double>(K);
                mc_means[d] = m / static_cast<double>(K);
            }
            const std::string mode(to_string(spec.power_modes[pm]));
            const std::string scheme(to_string(spec.schemes[si]));
            const auto eb = mean_and_stderr(bound_means);
            res.rows.push_back({kind, sweep_value, mode, scheme, "bound_mean", eb.mean, eb.stderr_});
            if (spec.mc_rates) {
                const auto em = mean_and_stderr(mc_means);
                res.rows.push_back({kind, sweep_value, mode, scheme, "mc_mean", em.mean, em.stderr_});
                res.rows.push_back(
                    {kind, sweep_value, mode, scheme, "jensen_violations", static_cast<double>(violations), 0.0});
            }
        }
    }
}

} // namespace detail

/// Mean user rate against data SNR. All SNR points reuse the same drops.
inline ExperimentResult run_rate_vs_snr(const ExperimentSpec& spec, std::size_t workers = 1)
{
    if (spec.kind != ExperimentKind::RateVsSnr)
        throw config_error("run_rate_vs_snr needs kind = rate_vs_snr");
    spec.validate();
    ExperimentResult res{spec, {}, {}, {}};
    std::vector<NoiseLevels> points;
    for (double snr : spec.sweep)
        points.push_back(noise_for_snr(spec, snr));
    std::vector<DropRates> drops(spec.drops);
    parallel_for(spec.drops, workers,
                 [&](std::size_t d) { drops[d] = rate_drop(spec, spec.config, points, 0, d); });
    for (std::size_t p = 0; p < points.size(); ++p)
        detail::summarize_point(res, drops, spec.sweep[p], p, points.size(), spec.config.num_ues, true);
    return res;
}

/// Mean user rate against the number of APs at fixed SNR. Fresh drops per AP count.
inline ExperimentResult run_rate_vs_density(const ExperimentSpec& spec, std::size_t workers = 1)
{
    if (spec.kind != ExperimentKind::RateVsDensity)
        throw config_error("run_rate_vs_density needs kind = rate_vs_density");
    spec.validate();
    ExperimentResult res{spec, {}, {}, {}};
    const std::vector<NoiseLevels> points{noise_for_snr(spec, spec.snr_db)};
    for (std::size_t g = 0; g < spec.sweep.size(); ++g) {
        NetworkConfig cfg = spec.config;
        cfg.num_aps = static_cast<std::size_t>(spec.sweep[g]);
        std::vector<DropRates> drops(spec.drops);
        parallel_for(spec.drops, workers, [&](std::size_t d) { drops[d] = rate_drop(spec, cfg, points, g, d); });
        detail::summarize_point(res, drops, spec.sweep[g], 0, 1, cfg.num_ues, true);
    }
    return res;
}

/// Empirical per-user rate distribution at fixed SNR, pooled over drops. Uses
/// the Monte-Carlo rates when enabled, otherwise the bounds.
inline ExperimentResult run_rate_cdf(const ExperimentSpec& spec, std::size_t workers = 1)
{
    if (spec.kind != ExperimentKind::RateCdf)
        throw config_error("run_rate_cdf needs kind = rate_cdf");
    spec.validate();
    ExperimentResult res{spec, {}, {}, {}};
    const std::string kind(to_string(spec.kind));
    const std::vector<NoiseLevels> points{noise_for_snr(spec, spec.snr_db)};
    for (std::size_t g = 0; g < spec.sweep.size(); ++g) {
        NetworkConfig cfg = spec.config;
        cfg.num_aps = static_cast<std::size_t>(spec.sweep[g]);
        std::vector<DropRates> drops(spec.drops);
        parallel_for(spec.drops, workers, [&](std::size_t d) { drops[d] = rate_drop(spec, cfg, points, g, d); });
        const std::size_t first_user = res.users.size();
        detail::summarize_point(res, drops, spec.sweep[g], 0, 1, cfg.num_ues, true);

        for (auto mode : spec.power_modes) {
            for (auto scheme : spec.schemes) {
                std::vector<double> sample;
                for (std::size_t u = first_user; u < res.users.size(); ++u) {
                    const auto& ur = res.users[u];
                    if (ur.mode == mode && ur.scheme == scheme)
                        sample.push_back(ur.has_mc ? ur.mc.mean : ur.bound);
                }
                std::sort(sample.begin(), sample.end());
                const std::string pm(to_string(mode));
                const std::string sc(to_string(scheme));
                const double n = static_cast<double>(sample.size());
                const double zero =
                    static_cast<double>(std::count_if(sample.begin(), sample.end(), [](double r) { return r <= 0.0; }));
                const double pz = zero / n;
                res.rows.push_back({kind, spec.sweep[g], pm, sc, "zero_rate_fraction", pz, std::sqrt(pz * (1 - pz) / n)});
                for (auto [name, p] : {std::pair{"q05", 0.05}, std::pair{"q50", 0.5}, std::pair{"q95", 0.95}})
                    res.rows.push_back({kind, spec.sweep[g], pm, sc, name, percentile(sample, p), 0.0});
                for (double r : sample)
                    res.rows.push_back({kind, spec.sweep[g], pm, sc, "sample", r, 0.0});
            }
        }
    }
    return res;
}

inline ExperimentResult run_experiment(const ExperimentSpec& spec, std::size_t workers = 1)
{
    switch (spec.kind) {
    case ExperimentKind::LosPmf: return run_los_pmf(spec, workers);
    case ExperimentKind::RateVsSnr: return run_rate_vs_snr(spec, workers);
    case ExperimentKind::RateCdf: return run_rate_cdf(spec, workers);
    case ExperimentKind::RateVsDensity: return run_rate_vs_density(spec, workers);
    }
    throw config_error("unknown experiment kind");
}

// ------------------------------------------------------------------------
// CSV

inline constexpr std::string_view csv_header = "kind,sweep,power_mode,scheme,statistic,value,stderr";

inline void write_csv(std::ostream& out, const std::vector<ResultRow>& rows)
{
    out << csv_header << '\n';
    for (const auto& r : rows)
        out << r.kind << ',' << format_number(r.sweep) << ',' << r.power_mode << ',' << r.scheme << ','
            << r.statistic << ',' << format_number(r.value) << ',' << format_number(r.stderr_) << '\n';
}

inline std::vector<ResultRow> read_csv(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line) || trim(line) != csv_header)
        throw std::runtime_error("result CSV: missing or unexpected header");
    auto number = [](const std::string& s) {
        double v = 0.0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size())
            throw std::runtime_error("result CSV: bad number '" + s + "'");
        return v;
    };
    std::vector<ResultRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        std::vector<std::string> f;
        std::size_t start = 0;
        for (;;) {
            const auto end = line.find(',', start);
            f.push_back(line.substr(start, end == std::string::npos ? std::string::npos : end - start));
            if (end == std::string::npos)
                break;
            start = end + 1;
        }
        if (f.size() != 7)
            throw std::runtime_error("result CSV: line " + std::to_string(line_no) + " has " +
                                     std::to_string(f.size()) + " fields");
        rows.push_back({f[0], number(f[1]), f[2], f[3], f[4], number(f[5]), number(f[6])});
    }
    return rows;
}

// ------------------------------------------------------------------------
// SVG plots

struct PlotSeries {
    std::string name;
    std::vector<double> x, y, err;
    bool dashed = false;
    bool step = false; // draw as an empirical CDF staircase
    int color = -1;    // palette index, -1 = series index
};

struct PlotSpec {
    std::string title, xlabel, ylabel;
    bool log_x = false;
    std::vector<PlotSeries> series;
};

namespace detail {

/// Round tick values (1, 2 or 5 times a power of ten) covering [lo, hi].
inline std::vector<double> nice_ticks(double lo, double hi, int target = 6)
{
    const double raw = (hi - lo) / target;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
        step = m * mag;
        if (raw <= step)
            break;
    }
    std::vector<double> t;
    for (double v = std::ceil(lo / step - 1e-9) * step; v <= hi + 1e-9 * step; v += step)
        t.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
    return t;
}

} // namespace detail

/// Minimal line/step plot with error bars and a legend.
inline std::string render_svg(const PlotSpec& p)
{
    constexpr double W = 900, H = 500, L = 70, R = 300, T = 40, B = 55;
    const double pw = W - L - R, ph = H - T - B;
    auto tx = [&](double v) { return p.log_x ? std::log10(std::max(v, 1e-300)) : v; };
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    std::vector<double> xs;
    for (const auto& s : p.series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double e = i < s.err.size() ? s.err[i] : 0.0;
            x0 = std::min(x0, tx(s.x[i]));
            x1 = std::max(x1, tx(s.x[i]));
            y0 = std::min(y0, s.y[i] - e);
            y1 = std::max(y1, s.y[i] + e);
            xs.push_back(s.x[i]);
        }
    }
    if (!std::isfinite(x0)) { x0 = 0; x1 = 1; y0 = 0; y1 = 1; }
    if (x1 == x0) { x0 -= 0.5; x1 += 0.5; }
    if (y1 == y0) { y0 -= 0.5; y1 += 0.5; }
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    auto px = [&](double v) { return L + (tx(v) - x0) / (x1 - x0) * pw; };
    auto py = [&](double v) { return T + (1.0 - (v - y0) / (y1 - y0)) * ph; };
    auto f = [](double v) {
        char b[32];
        std::snprintf(b, sizeof b, "%.2f", v);
        return std::string(b);
    };
    auto tick = [](double v) {
        char b[32];
        std::snprintf(b, sizeof b, "%.6g", v);
        return std::string(b);
    };
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2",
                                    "#17becf", "#7f7f7f", "#bcbd22"};

    std::vector<double> xticks;
    if (p.log_x) {
        std::sort(xs.begin(), xs.end());
        xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
        if (xs.size() <= 10) {
            xticks = xs;
        } else {
            for (double e = std::ceil(x0); e <= x1; e += 1.0)
                xticks.push_back(std::pow(10.0, e));
        }
    } else {
        xticks = detail::nice_ticks(x0, x1);
    }

    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << L + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << p.title << "</text>\n";
    for (double xv : xticks) {
        const double X = px(xv);
        o << "<line x1=\"" << f(X) << "\" y1=\"" << T << "\" x2=\"" << f(X) << "\" y2=\"" << T + ph
          << "\" stroke=\"#e6e6e6\"/>";
        o << "<line x1=\"" << f(X) << "\" y1=\"" << T + ph << "\" x2=\"" << f(X) << "\" y2=\"" << T + ph + 5
          << "\" stroke=\"black\"/>";
        o << "<text x=\"" << f(X) << "\" y=\"" << T + ph + 18 << "\" text-anchor=\"middle\">" << tick(xv)
          << "</text>\n";
    }
    for (double yv : detail::nice_ticks(y0, y1)) {
        const double Y = py(yv);
        o << "<line x1=\"" << L << "\" y1=\"" << f(Y) << "\" x2=\"" << L + pw << "\" y2=\"" << f(Y)
          << "\" stroke=\"#e6e6e6\"/>";
        o << "<line x1=\"" << L - 5 << "\" y1=\"" << f(Y) << "\" x2=\"" << L << "\" y2=\"" << f(Y)
          << "\" stroke=\"black\"/>";
        o << "<text x=\"" << L - 8 << "\" y=\"" << f(Y + 4) << "\" text-anchor=\"end\">" << tick(yv) << "</text>\n";
    }
    o << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    o << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << p.xlabel << "</text>\n";
    o << "<text transform=\"translate(16," << T + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << p.ylabel
      << "</text>\n";

    for (std::size_t si = 0; si < p.series.size(); ++si) {
        const auto& s = p.series[si];
        const char* color = palette[(s.color < 0 ? static_cast<int>(si) : s.color) % 10];
        std::string pts;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (s.step && i > 0)
                pts += f(px(s.x[i])) + "," + f(py(s.y[i - 1])) + " ";
            pts += f(px(s.x[i])) + "," + f(py(s.y[i])) + " ";
        }
        o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\""
          << (s.dashed ? " stroke-dasharray=\"6,4\"" : "") << " points=\"" << pts << "\"/>\n";
        for (std::size_t i = 0; i < s.err.size() && i < s.x.size(); ++i) {
            if (s.err[i] <= 0.0)
                continue;
            o << "<line x1=\"" << f(px(s.x[i])) << "\" y1=\"" << f(py(s.y[i] - s.err[i])) << "\" x2=\""
              << f(px(s.x[i])) << "\" y2=\"" << f(py(s.y[i] + s.err[i])) << "\" stroke=\"" << color << "\"/>\n";
        }
        const double ly = T + 14 + 18.0 * static_cast<double>(si);
        o << "<line x1=\"" << L + pw + 12 << "\" y1=\"" << f(ly - 4) << "\" x2=\"" << L + pw + 36 << "\" y2=\""
          << f(ly - 4) << "\" stroke=\"" << color << "\" stroke-width=\"1.5\""
          << (s.dashed ? " stroke-dasharray=\"6,4\"" : "") << "/>";
        o << "<text x=\"" << L + pw + 42 << "\" y=\"" << f(ly) << "\">" << s.name << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

/// Builds the default plot of an experiment from its rows.
inline PlotSpec plot_for(const ExperimentSpec& spec, const std::vector<ResultRow>& rows)
{
    PlotSpec p;
    const std::string unit = spec.log_base == 2.0 ? "bits/channel use" : "nats/channel use";
    switch (spec.kind) {
    case ExperimentKind::LosPmf: {
        p.title = "LoS links per UE";
        p.xlabel = "number of LoS links";
        p.ylabel = "probability";
        for (double m : spec.sweep) {
            PlotSeries s;
            s.name = "M=" + format_number(m);
            for (const auto& r : rows)
                if (r.sweep == m && r.statistic.rfind("pmf_", 0) == 0) {
                    s.x.push_back(std::stod(r.statistic.substr(4)));
                    s.y.push_back(r.value);
                    s.err.push_back(r.stderr_);
                }
            p.series.push_back(std::move(s));
        }
        return p;
    }
    case ExperimentKind::RateVsSnr:
    case ExperimentKind::RateVsDensity: {
        const bool snr = spec.kind == ExperimentKind::RateVsSnr;
        p.title = snr ? "Mean per-user rate vs data SNR" : "Mean per-user rate vs AP count";
        p.xlabel = snr ? "data SNR 1/sigma_o^2 (dB)" : "APs per km^2";
        p.ylabel = "rate (" + unit + ")";
        p.log_x = !snr;
        for (const auto& mode : spec.power_modes) {
            for (const auto& scheme : spec.schemes) {
                for (const char* stat : {"mc_mean", "bound_mean"}) {
                    if (!spec.mc_rates && std::string_view(stat) == "mc_mean")
                        continue;
                    PlotSeries s;
                    s.name = std::string(to_string(scheme)) + " " + std::string(to_string(mode)) +
                             (std::string_view(stat) == "bound_mean" ? " bound" : "");
                    s.dashed = std::string_view(stat) == "bound_mean";
                    s.color = static_cast<int>(&mode - spec.power_modes.data()) * static_cast<int>(spec.schemes.size()) +
                              static_cast<int>(&scheme - spec.schemes.data());
                    for (const auto& r : rows)
                        if (r.power_mode == to_string(mode) && r.scheme == to_string(scheme) && r.statistic == stat) {
                            const double area_km2 = spec.config.area_side * spec.config.area_side * 1e-6;
                            s.x.push_back(snr ? r.sweep : r.sweep / area_km2);
                            s.y.push_back(r.value);
                            s.err.push_back(r.stderr_);
                        }
                    p.series.push_back(std::move(s));
                }
            }
        }
        return p;
    }
    case ExperimentKind::RateCdf: {
        p.title = "CDF of per-user rate";
        p.xlabel = "rate (" + unit + ")";
        p.ylabel = "CDF";
        for (double m : spec.sweep) {
            for (auto mode : spec.power_modes) {
                for (auto scheme : spec.schemes) {
                    PlotSeries s;
                    s.name = std::string(to_string(scheme)) + " " + std::string(to_string(mode)) +
                             (spec.sweep.size() > 1 ? " M=" + format_number(m) : "");
                    s.step = true;
                    std::vector<double> v;
                    for (const auto& r : rows)
                        if (r.sweep == m && r.power_mode == to_string(mode) && r.scheme == to_string(scheme) &&
                            r.statistic == "sample")
                            v.push_back(r.value);
                    for (std::size_t i = 0; i < v.size(); ++i) {
                        s.x.push_back(v[i]);
                        s.y.push_back(static_cast<double>(i + 1) / static_cast<double>(v.size()));
                    }
                    p.series.push_back(std::move(s));
                }
            }
        }
        return p;
    }
    }
    return p;
}

// ------------------------------------------------------------------------
// Output files

/// Base file name: <kind>_<spec hash>_seed<seed>.
inline std::string output_stem(const ExperimentSpec& spec)
{
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(spec.hash()));
    return std::string(to_string(spec.kind)) + "_" + hash + "_seed" + std::to_string(spec.seed);
}

/// Writes the requested formats ("csv", "svg") into `dir` and returns the paths.
inline std::vector<std::filesystem::path> emit(const ExperimentResult& res, const std::filesystem::path& dir,
                                               const std::vector<std::string>& formats)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    std::vector<std::filesystem::path> written;
    const std::string stem = output_stem(res.spec);
    for (const auto& fmt : formats) {
        std::filesystem::path path;
        std::ofstream out;
        if (fmt == "csv") {
            path = dir / (stem + ".csv");
            out.open(path, std::ios::binary);
            if (out)
                write_csv(out, res.rows);
        } else if (fmt == "svg") {
            path = dir / (stem + ".svg");
            out.open(path, std::ios::binary);
            if (out)
                out << render_svg(plot_for(res.spec, res.rows));
        } else {
            throw config_error("unknown output format '" + fmt + "'");
        }
        if (!out)
            throw std::runtime_error("cannot write '" + path.string() + "'");
        written.push_back(path);
    }
    return written;
}

/// Writes the allocation matrix of every (mode, scheme) and one channel
/// realization for the first drop of the first sweep point.
inline std::vector<std::filesystem::path> emit_drop_artifacts(const ExperimentSpec& spec,
                                                              const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    NetworkConfig cfg = spec.config;
    double snr = spec.snr_db;
    if (spec.kind == ExperimentKind::RateVsSnr)
        snr = spec.sweep.front();
    else
        cfg.num_aps = static_cast<std::size_t>(spec.sweep.front());
    const auto nz = noise_for_snr(spec, snr);
    const LinkStatistics stats = detail::drop_statistics(spec, cfg, 0, 0);
    const std::string stem = output_stem(spec);
    std::vector<std::filesystem::path> written;
    for (auto mode : spec.power_modes) {
        for (auto scheme : spec.schemes) {
            const auto alloc = solve_power(mode, scheme, stats, nz.sigma_u2, budget_for(mode, cfg), spec.power_split);
            const auto path =
                dir / (stem + "_alloc_" + std::string(to_string(mode)) + "_" + std::string(to_string(scheme)) + ".csv");
            std::ofstream out(path, std::ios::binary);
            write_allocation_csv(out, alloc);
            if (!out)
                throw std::runtime_error("cannot write '" + path.string() + "'");
            written.push_back(path);
        }
    }
    Rng rng = make_rng(spec.seed, detail::stream_id(detail::tag_mc, 0xFFFF), 0);
    ChannelRealization r = sample_realization(stats, rng);
    estimate_uplink(r, stats, nz.sigma_u2, rng);
    const auto path = dir / (stem + "_realization.bin");
    std::ofstream out(path, std::ios::binary);
    write_realization(out, r);
    if (!out)
        throw std::runtime_error("cannot write '" + path.string() + "'");
    written.push_back(path);
    return written;
}

// ------------------------------------------------------------------------
// Oracle validation suite

/// Random small instance for checking closed-form moments against the oracle.
/// beta is rescaled to the LoS gain so that every term of the moment formulas
/// carries weight; noise levels are set relative to the instance's gains.
struct ValidationInstance {
    LinkStatistics stats;
    PowerControlMode mode = PowerControlMode::PerAP;
    double sigma_u2 = 0.0;
    double sigma_d2 = 0.0;
};

inline ValidationInstance make_validation_instance(std::uint64_t seed, std::size_t index)
{
    Rng rng = make_rng(seed, 0x76616c6964ULL, index);
    std::uniform_int_distribution<std::size_t> pick_m(2, 4), pick_n(1, 2), pick_k(2, 3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    NetworkConfig cfg;
    cfg.num_aps = pick_m(rng);
    cfg.antennas_per_ap = pick_n(rng);
    cfg.num_ues = pick_k(rng);
    if (cfg.num_aps * cfg.antennas_per_ap <= cfg.num_ues)
        cfg.antennas_per_ap = 2;
    cfg.area_side = 40.0;
    const Deployment d = deploy(cfg, rng());
    const LinkStatistics base = LinkStatistics::from_deployment(d, cfg);
    const std::size_t M = cfg.num_aps, K = cfg.num_ues;
    RealMatrix q(M, K), beta(M, K);
    double mean_zeta = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t k = 0; k < K; ++k) {
            q(m, k) = u(rng) < 0.15 ? (u(rng) < 0.5 ? 0.0 : 1.0) : u(rng);
            beta(m, k) = base.zeta_self(m, k) * (0.05 + 1.5 * u(rng)) / static_cast<double>(cfg.antennas_per_ap);
            mean_zeta += base.zeta_self(m, k) / static_cast<double>(M * K);
        }
    }
    ValidationInstance v;
    v.stats = LinkStatistics(q, beta, base.los_vectors());
    v.mode = u(rng) < 0.5 ? PowerControlMode::PerAP : PowerControlMode::PerUE;
    v.sigma_u2 = mean_zeta * (0.05 + u(rng));
    v.sigma_d2 = mean_zeta * mean_zeta * (0.02 + u(rng));
    return v;
}

struct ValidationCheck {
    std::size_t instance = 0;
    Scheme scheme = Scheme::AccurateCSI;
    FieldComparison field;
    bool pass = false;
};

/// A field passes if the closed form lies within 3 oracle standard errors or
/// within 2% relative of the oracle mean.
inline bool field_passes(const FieldComparison& f)
{
    const double tol = std::max({3.0 * f.stderr_, 0.02 * std::abs(f.closed), 1e-9 * std::abs(f.closed)});
    return f.abs_diff() <= tol;
}

struct ValidationReport {
    std::vector<ValidationCheck> checks;
    std::size_t instances = 0;
    std::size_t trials = 0;

    std::size_t failures() const
    {
        return static_cast<std::size_t>(std::count_if(checks.begin(), checks.end(), [](auto& c) { return !c.pass; }));
    }
    /// Fields beyond 3 standard errors, regardless of the relative allowance.
    std::size_t strict_exceedances() const
    {
        return static_cast<std::size_t>(
            std::count_if(checks.begin(), checks.end(), [](auto& c) { return c.field.z() > 3.0; }));
    }
    /// Fields with a nonzero stderr; about 0.27% of them exceed 3 sigma by chance.
    std::size_t random_fields() const
    {
        return static_cast<std::size_t>(
            std::count_if(checks.begin(), checks.end(), [](auto& c) { return c.field.stderr_ > 0.0; }));
    }
};

inline ValidationReport run_validation(std::size_t instances, std::size_t trials, std::uint64_t seed,
                                       std::size_t workers = 1, const std::vector<Scheme>& schemes = {
                                                                    all_schemes.begin(), all_schemes.end()})
{
    std::vector<std::vector<ValidationCheck>> per(instances * schemes.size());
    parallel_for(per.size(), workers, [&](std::size_t job) {
        const std::size_t i = job / schemes.size();
        const Scheme scheme = schemes[job % schemes.size()];
        const auto inst = make_validation_instance(seed, i);
        const auto alloc = solve_power(inst.mode, scheme, inst.stats, inst.sigma_u2, 1.0);
        const auto closed = closed_form_moments(scheme, inst.stats, alloc, inst.sigma_u2, inst.sigma_d2);
        Rng rng = make_rng(seed, 0x6f7261636c65ULL, i, static_cast<std::uint64_t>(scheme));
        const auto oracle = oracle_moments(scheme, inst.stats, alloc, inst.sigma_u2, inst.sigma_d2, trials, rng);
        for (const auto& f : compare_moments(closed, oracle))
            per[job].push_back({i, scheme, f, field_passes(f)});
    });
    ValidationReport rep;
    rep.instances = instances;
    rep.trials = trials;
    for (auto& v : per)
        rep.checks.insert(rep.checks.end(), v.begin(), v.end());
    return rep;
}

} // namespace cfmimo

#endif // CFMIMO_HARNESS_HPP
