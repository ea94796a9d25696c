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

#ifndef CFMIMO_NETGEOM_HPP
#define CFMIMO_NETGEOM_HPP

#include "core.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>
#include <string_view>
#include <utility>

namespace cfmimo {

// ------------------------------------------------------------------------
// Flat "key = value" text files ('#' starts a comment)

struct KeyValue {
    std::string key;
    std::string value;
    int line = 0;
};

inline std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<KeyValue> parse_key_values(std::istream& in)
{
    std::vector<KeyValue> out;
    std::string line;
    int no = 0;
    while (std::getline(in, line)) {
        ++no;
        if (const auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        const std::string t = trim(line);
        if (t.empty())
            continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw config_error("line " + std::to_string(no) + ": expected 'key = value'");
        KeyValue kv{trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)), no};
        if (kv.key.empty() || kv.value.empty())
            throw config_error("line " + std::to_string(no) + ": empty key or value");
        for (const auto& prev : out)
            if (prev.key == kv.key)
                throw config_error("line " + std::to_string(no) + ": duplicate key '" + kv.key + "'");
        out.push_back(std::move(kv));
    }
    return out;
}

inline std::vector<KeyValue> parse_key_values(std::string_view text)
{
    std::istringstream in{std::string(text)};
    return parse_key_values(in);
}

inline double parse_double(const std::string& key, std::string_view v)
{
    double out = 0.0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size() || !std::isfinite(out))
        throw config_error("key '" + key + "': not a finite number: '" + std::string(v) + "'");
    return out;
}

inline std::size_t parse_count(const std::string& key, std::string_view v)
{
    unsigned long long out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
        throw config_error("key '" + key + "': not a non-negative integer: '" + std::string(v) + "'");
    return static_cast<std::size_t>(out);
}

// ------------------------------------------------------------------------
// Scenario parameters

/// All scenario parameters. Lengths in meters, everything linear.
struct NetworkConfig {
    std::size_t num_aps = 1024;
    std::size_t antennas_per_ap = 1;
    std::size_t num_ues = 64;
    double area_side = 1000.0;
    double ap_height = 10.0;
    double ue_height = 1.5;
    double carrier_freq = 3.5e9;
    std::optional<double> antenna_spacing; // unset: half a wavelength
    double ap_gain = 1.0;
    double ue_gain = 1.0;
    double built_fraction = 0.5;
    double blockage_density = 300e-6;
    double avg_blockage_height = 20.0;
    double noise_ul = 0.01;
    double noise_dl = 0.01;
    double noise_data = 0.01;
    double pathloss_exponent = 3.67;
    double pathloss_ref_distance = 1.0;
    double power_budget = 1.0;
    double shadowing_std_db = 0.0; // 0 disables lognormal shadowing

    double wavelength() const { return speed_of_light / carrier_freq; }
    double spacing() const { return antenna_spacing.value_or(0.5 * wavelength()); }

    /// Throws config_error on the first violated invariant.
    void validate() const
    {
        auto positive = [](double v, const char* name) {
            if (!(v > 0.0))
                throw config_error(std::string(name) + " must be strictly positive");
        };
        if (num_aps == 0 || antennas_per_ap == 0 || num_ues == 0)
            throw config_error("num_aps, antennas_per_ap and num_ues must be positive");
        if (num_aps * antennas_per_ap <= num_ues)
            throw config_error("num_aps * antennas_per_ap must exceed num_ues");
        positive(area_side, "area_side");
        positive(ap_height, "ap_height");
        positive(ue_height, "ue_height");
        positive(carrier_freq, "carrier_freq");
        if (antenna_spacing)
            positive(*antenna_spacing, "antenna_spacing");
        positive(ap_gain, "ap_gain");
        positive(ue_gain, "ue_gain");
        positive(blockage_density, "blockage_density");
        positive(avg_blockage_height, "avg_blockage_height");
        positive(noise_ul, "noise_ul");
        positive(noise_dl, "noise_dl");
        positive(noise_data, "noise_data");
        positive(pathloss_exponent, "pathloss_exponent");
        positive(pathloss_ref_distance, "pathloss_ref_distance");
        positive(power_budget, "power_budget");
        if (!(built_fraction > 0.0 && built_fraction <= 1.0))
            throw config_error("built_fraction must lie in (0, 1]");
        if (!(ap_height > ue_height))
            throw config_error("ap_height must exceed ue_height");
        if (shadowing_std_db < 0.0)
            throw config_error("shadowing_std_db must be non-negative");
    }

    /// Applies one key. Returns false if the key is not a scenario key.
    bool apply(const std::string& key, const std::string& value)
    {
        auto count = [&](std::size_t& f) { f = parse_count(key, value); };
        auto real = [&](double& f) { f = parse_double(key, value); };
        if (key == "num_aps") count(num_aps);
        else if (key == "antennas_per_ap") count(antennas_per_ap);
        else if (key == "num_ues") count(num_ues);
        else if (key == "area_side") real(area_side);
        else if (key == "ap_height") real(ap_height);
        else if (key == "ue_height") real(ue_height);
        else if (key == "carrier_freq") real(carrier_freq);
        else if (key == "antenna_spacing") antenna_spacing = parse_double(key, value);
        else if (key == "ap_gain") real(ap_gain);
        else if (key == "ue_gain") real(ue_gain);
        else if (key == "built_fraction") real(built_fraction);
        else if (key == "blockage_density") real(blockage_density);
        else if (key == "avg_blockage_height") real(avg_blockage_height);
        else if (key == "noise_ul") real(noise_ul);
        else if (key == "noise_dl") real(noise_dl);
        else if (key == "noise_data") real(noise_data);
        else if (key == "pathloss_exponent") real(pathloss_exponent);
        else if (key == "pathloss_ref_distance") real(pathloss_ref_distance);
        else if (key == "power_budget") real(power_budget);
        else if (key == "shadowing_std_db") real(shadowing_std_db);
        else return false;
        return true;
    }

    static NetworkConfig from_key_values(const std::vector<KeyValue>& kvs)
    {
        NetworkConfig cfg;
        for (const auto& kv : kvs)
            if (!cfg.apply(kv.key, kv.value))
                throw config_error("line " + std::to_string(kv.line) + ": unknown key '" + kv.key + "'");
        cfg.validate();
        return cfg;
    }

    static NetworkConfig from_text(std::string_view text) { return from_key_values(parse_key_values(text)); }

    static NetworkConfig from_file(const std::string& path)
    {
        std::ifstream in(path);
        if (!in)
            throw config_error("cannot open config file '" + path + "'");
        return from_key_values(parse_key_values(in));
    }
};

// ------------------------------------------------------------------------
// Blockage-based LoS probability

/// Standard error function. The integral over [-z, z] scaled by 1/sqrt(pi)
/// is exactly the usual erf.
inline double erf(double z) { return std::erf(z); }

/// Per-building blocking parameter for Rayleigh-distributed building heights
/// with mean-height parameter rho, seen by a link between heights h_tx > h_rx.
inline double blockage_omega(const NetworkConfig& cfg)
{
    const double rho = cfg.avg_blockage_height;
    const double hm = cfg.ap_height;
    const double hk = cfg.ue_height;
    return std::sqrt(pi / 2.0) * rho / (hm - hk) *
           (erf(hm / (rho * std::sqrt(2.0))) - erf(hk / (rho * std::sqrt(2.0))));
}

/// LoS probability as a function of ground distance. omega is evaluated once
/// at construction.
class LosModel {
public:
    explicit LosModel(const NetworkConfig& cfg)
    {
        if (!(cfg.ap_height > cfg.ue_height))
            throw config_error("LoS model requires ap_height > ue_height");
        omega_ = blockage_omega(cfg);
        if (!(omega_ >= 0.0 && omega_ <= 1.0))
            throw config_error("blockage parameters give omega = " + std::to_string(omega_) +
                               " outside [0, 1]");
        buildings_per_meter_ = std::sqrt(cfg.built_fraction * cfg.blockage_density);
    }

    double omega() const noexcept { return omega_; }

    /// Expected number of buildings crossed per meter of ground distance.
    double crossing_rate() const noexcept { return buildings_per_meter_; }

    double operator()(double d2d) const
    {
        if (d2d < 0.0)
            throw std::invalid_argument("ground distance must be non-negative");
        const double q = std::pow(1.0 - omega_, buildings_per_meter_ * d2d);
        return std::clamp(q, 0.0, 1.0);
    }

private:
    double omega_ = 0.0;
    double buildings_per_meter_ = 0.0;
};

inline double los_probability(double d2d, const NetworkConfig& cfg) { return LosModel(cfg)(d2d); }

// ------------------------------------------------------------------------
// NLoS large-scale gain

struct PathGain {
    double value = 0.0;
    bool clamped = false; // distance was below the reference distance
};

/// Log-distance NLoS gain (lambda / (4 pi d0))^2 (d0 / d)^exponent.
inline PathGain nlos_pathloss(double d3d, const NetworkConfig& cfg)
{
    const double d0 = cfg.pathloss_ref_distance;
    PathGain g;
    if (d3d < d0) {
        d3d = d0;
        g.clamped = true;
    }
    const double ref = cfg.wavelength() / (4.0 * pi * d0);
    g.value = ref * ref * std::pow(d0 / d3d, cfg.pathloss_exponent);
    return g;
}

// ------------------------------------------------------------------------
// Deployments

struct Point2 {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point2&) const = default;
};

/// One drop: positions plus every deterministic per-link quantity.
struct Deployment {
    std::vector<Point2> ap_positions;
    std::vector<Point2> ue_positions;
    std::vector<double> ap_orientation; // array broadside bearing, radians
    RealMatrix dist3d;                  // M x K
    RealMatrix dist2d;
    RealMatrix angle; // departure angle from broadside, (-pi, pi]
    RealMatrix los_prob;
    RealMatrix beta;
    std::size_t clamped_links = 0;

    std::size_t num_aps() const noexcept { return ap_positions.size(); }
    std::size_t num_ues() const noexcept { return ue_positions.size(); }
};

/// Builds a deployment from explicit positions. Shadowing, when enabled, is
/// drawn from `shadow_seed`.
inline Deployment deploy_at(const NetworkConfig& cfg, std::vector<Point2> aps, std::vector<Point2> ues,
                            std::vector<double> orientation, std::uint64_t shadow_seed = 0)
{
    cfg.validate();
    if (orientation.size() != aps.size())
        throw std::invalid_argument("one orientation per AP required");
    const LosModel los(cfg);
    const std::size_t M = aps.size();
    const std::size_t K = ues.size();
    const double dh = cfg.ap_height - cfg.ue_height;

    Deployment d;
    d.dist3d = RealMatrix(M, K);
    d.dist2d = RealMatrix(M, K);
    d.angle = RealMatrix(M, K);
    d.los_prob = RealMatrix(M, K);
    d.beta = RealMatrix(M, K);

    Rng shadow_rng = make_rng(shadow_seed, 0x736861646f77ULL);
    std::normal_distribution<double> shadow(0.0, cfg.shadowing_std_db);

    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t k = 0; k < K; ++k) {
            const double dx = ues[k].x - aps[m].x;
            const double dy = ues[k].y - aps[m].y;
            const double d2 = std::hypot(dx, dy);
            const double d3 = std::sqrt(d2 * d2 + dh * dh);
            d.dist2d(m, k) = d2;
            d.dist3d(m, k) = d3;
            d.angle(m, k) = std::remainder(std::atan2(dy, dx) - orientation[m], 2.0 * pi);
            d.los_prob(m, k) = los(d2);
            const PathGain g = nlos_pathloss(d3, cfg);
            d.clamped_links += g.clamped ? 1 : 0;
            double b = g.value;
            if (cfg.shadowing_std_db > 0.0)
                b *= db_to_linear(shadow(shadow_rng));
            d.beta(m, k) = b;
        }
    }
    d.ap_positions = std::move(aps);
    d.ue_positions = std::move(ues);
    d.ap_orientation = std::move(orientation);
    return d;
}

/// Uniform i.i.d. placement of APs and UEs over the square region, array
/// orientations uniform in [0, 2 pi). Same seed, same deployment.
inline Deployment deploy(const NetworkConfig& cfg, std::uint64_t seed)
{
    cfg.validate();
    Rng rng = make_rng(seed, 0x6465706c6f79ULL);
    std::uniform_real_distribution<double> pos(0.0, cfg.area_side);
    std::uniform_real_distribution<double> bearing(0.0, 2.0 * pi);
    std::vector<Point2> aps(cfg.num_aps), ues(cfg.num_ues);
    for (auto& p : aps) {
        p.x = pos(rng);
        p.y = pos(rng);
    }
    for (auto& p : ues) {
        p.x = pos(rng);
        p.y = pos(rng);
    }
    std::vector<double> orientation(cfg.num_aps);
    for (auto& o : orientation)
        o = bearing(rng);
    return deploy_at(cfg, std::move(aps), std::move(ues), std::move(orientation), seed);
}

} // namespace cfmimo

#endif // CFMIMO_NETGEOM_HPP
