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

#ifndef CFMIMO_CHANNEL_HPP
#define CFMIMO_CHANNEL_HPP

#include "netgeom.hpp"

#include <bit>
#include <istream>
#include <memory>
#include <mutex>
#include <ostream>

namespace cfmimo {

/// Uniform linear array response; entry p is exp(i 2 pi p (d / lambda) sin theta).
inline std::vector<cplx> array_response(double theta, std::size_t n_antennas, double spacing, double wavelength)
{
    std::vector<cplx> a(n_antennas);
    const double phase_step = 2.0 * pi * (spacing / wavelength) * std::sin(theta);
    for (std::size_t p = 0; p < n_antennas; ++p)
        a[p] = std::polar(1.0, phase_step * static_cast<double>(p));
    return a;
}

/// Geometry of a single link as seen by the LoS model.
struct LinkGeometry {
    double distance = 0.0; // 3-D, meters
    double angle = 0.0;    // radians from broadside
    double ap_height = 0.0;
    double ue_height = 0.0;
    double ap_gain = 1.0;
    double ue_gain = 1.0;
};

/// Scalar factor multiplying the array response in the LoS channel.
inline cplx los_coefficient(const LinkGeometry& g, double wavelength)
{
    if (!(g.distance > 0.0))
        throw std::invalid_argument("LoS link distance must be positive");
    const double amplitude = std::sqrt(g.ap_gain * g.ue_gain) * (g.ue_height * g.ap_height) / (4.0 * pi * g.distance);
    return std::polar(amplitude, 2.0 * pi * g.distance / wavelength);
}

inline std::vector<cplx> los_channel(const LinkGeometry& g, std::size_t n_antennas, double spacing, double wavelength)
{
    auto a = array_response(g.angle, n_antennas, spacing, wavelength);
    const cplx c = los_coefficient(g, wavelength);
    for (auto& v : a)
        v *= c;
    return a;
}

// ------------------------------------------------------------------------
// Link statistics

/// Deterministic second-order description of all M x K links: LoS vectors,
/// LoS probabilities q and NLoS gains beta. Immutable; the zeta tensor is
/// memoized per AP and the memo is shared between copies.
class LinkStatistics {
public:
    LinkStatistics() = default;

    LinkStatistics(RealMatrix q, RealMatrix beta, LinkVectors los)
        : q_(std::move(q)), beta_(std::move(beta)), field_(std::make_shared<LosField>(std::move(los)))
    {
        if (q_.rows() != field_->vecs.aps() || q_.cols() != field_->vecs.ues() || beta_.rows() != q_.rows() ||
            beta_.cols() != q_.cols())
            throw std::invalid_argument("LinkStatistics: inconsistent dimensions");
        for (double v : q_.data())
            if (!(v >= 0.0 && v <= 1.0))
                throw std::invalid_argument("LinkStatistics: q outside [0, 1]");
        for (double v : beta_.data())
            if (!(v >= 0.0))
                throw std::invalid_argument("LinkStatistics: negative beta");
    }

    static LinkStatistics from_deployment(const Deployment& d, const NetworkConfig& cfg)
    {
        const std::size_t M = d.num_aps();
        const std::size_t K = d.num_ues();
        const std::size_t N = cfg.antennas_per_ap;
        LinkVectors los(M, K, N);
        for (std::size_t m = 0; m < M; ++m) {
            for (std::size_t k = 0; k < K; ++k) {
                const LinkGeometry g{d.dist3d(m, k), d.angle(m, k), cfg.ap_height, cfg.ue_height, cfg.ap_gain, cfg.ue_gain};
                const auto h = los_channel(g, N, cfg.spacing(), cfg.wavelength());
                std::copy(h.begin(), h.end(), los(m, k).begin());
            }
        }
        return LinkStatistics(d.los_prob, d.beta, std::move(los));
    }

    std::size_t num_aps() const noexcept { return q_.rows(); }
    std::size_t num_ues() const noexcept { return q_.cols(); }
    std::size_t antennas() const noexcept { return field_ ? field_->vecs.antennas() : 0; }

    double q(std::size_t m, std::size_t k) const { return q_(m, k); }
    double beta(std::size_t m, std::size_t k) const { return beta_(m, k); }
    const RealMatrix& q() const noexcept { return q_; }
    const RealMatrix& beta() const noexcept { return beta_; }

    std::span<const cplx> los_vec(std::size_t m, std::size_t k) const { return field_->vecs(m, k); }
    const LinkVectors& los_vectors() const { return field_->vecs; }

    /// zeta_mki = losvec_mk^T conj(losvec_mi).
    cplx zeta(std::size_t m, std::size_t k, std::size_t i) const { return zeta_slice(m)(k, i); }

    /// ||losvec_mk||^2, i.e. the real diagonal of the zeta tensor.
    double zeta_self(std::size_t m, std::size_t k) const { return field_->norms(m, k); }

    /// K x K slice of the zeta tensor for AP m, computed on first use.
    const ComplexMatrix& zeta_slice(std::size_t m) const
    {
        auto& f = *field_;
        std::call_once(f.once[m], [&] {
            const std::size_t K = f.vecs.ues();
            ComplexMatrix z(K, K);
            for (std::size_t k = 0; k < K; ++k) {
                for (std::size_t i = k; i < K; ++i) {
                    const cplx v = dot_tc(f.vecs(m, k), f.vecs(m, i));
                    z(k, i) = v;
                    z(i, k) = std::conj(v);
                }
                z(k, k) = f.norms(m, k);
            }
            f.slices[m] = std::move(z);
        });
        return f.slices[m];
    }

    /// Same LoS field and beta, different LoS probabilities. Used to condition
    /// on a frozen LoS state (q := alpha).
    LinkStatistics with_los_probabilities(RealMatrix q) const
    {
        if (q.rows() != q_.rows() || q.cols() != q_.cols())
            throw std::invalid_argument("with_los_probabilities: dimension mismatch");
        LinkStatistics out(*this);
        out.q_ = std::move(q);
        return out;
    }

private:
    struct LosField {
        explicit LosField(LinkVectors v)
            : vecs(std::move(v)), norms(vecs.aps(), vecs.ues()), once(new std::once_flag[vecs.aps()]),
              slices(vecs.aps())
        {
            for (std::size_t m = 0; m < vecs.aps(); ++m)
                for (std::size_t k = 0; k < vecs.ues(); ++k)
                    norms(m, k) = squared_norm(vecs(m, k));
        }
        LinkVectors vecs;
        RealMatrix norms;
        std::unique_ptr<std::once_flag[]> once;
        std::vector<ComplexMatrix> slices;
    };

    RealMatrix q_;
    RealMatrix beta_;
    std::shared_ptr<LosField> field_;
};

// ------------------------------------------------------------------------
// Fast-fading realizations

/// One draw of LoS indicators and NLoS fading (plus, once estimated, the
/// AP-side NLoS estimates).
struct ChannelRealization {
    Matrix<std::uint8_t> alpha; // M x K, entries in {0, 1}
    LinkVectors nlos;           // unit-variance CN entries
    LinkVectors est_nlos;       // empty until the uplink estimator has run

    bool has_estimates() const noexcept { return !est_nlos.empty(); }

    /// h_mk = alpha_mk losvec_mk + sqrt(beta_mk) nlos_mk.
    std::vector<cplx> composite(const LinkStatistics& stats, std::size_t m, std::size_t k) const
    {
        const auto los = stats.los_vec(m, k);
        const auto nl = nlos(m, k);
        const double a = alpha(m, k);
        const double sb = std::sqrt(stats.beta(m, k));
        std::vector<cplx> h(los.size());
        for (std::size_t n = 0; n < h.size(); ++n)
            h[n] = a * los[n] + sb * nl[n];
        return h;
    }

    bool operator==(const ChannelRealization&) const = default;
};

/// Draws alpha ~ Bernoulli(q) independently per link and i.i.d. CN(0, 1)
/// NLoS entries. Consumes `rng` in a fixed order: all alphas, then all NLoS
/// entries.
inline ChannelRealization sample_realization(const LinkStatistics& stats, Rng& rng)
{
    const std::size_t M = stats.num_aps();
    const std::size_t K = stats.num_ues();
    ChannelRealization r;
    r.alpha = Matrix<std::uint8_t>(M, K);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t m = 0; m < M; ++m)
        for (std::size_t k = 0; k < K; ++k)
            r.alpha(m, k) = u(rng) < stats.q(m, k) ? 1 : 0;
    r.nlos = LinkVectors(M, K, stats.antennas());
    fill_complex_normal(r.nlos.data(), rng);
    return r;
}

// ------------------------------------------------------------------------
// Binary dump (little-endian): "CFRZ", u32 version, u64 M, K, N,
// M*K alpha bytes, M*K*N complex64 NLoS pairs, u8 has_estimates, then the
// estimates in the same layout if present.

namespace detail {

template <typename T>
void put_le(std::ostream& out, T v)
{
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    U u = std::bit_cast<U>(v);
    for (std::size_t b = 0; b < sizeof(U); ++b)
        out.put(static_cast<char>((u >> (8 * b)) & 0xFF));
}

template <typename T>
T get_le(std::istream& in)
{
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    U u = 0;
    for (std::size_t b = 0; b < sizeof(U); ++b) {
        const int c = in.get();
        if (c == std::char_traits<char>::eof())
            throw std::runtime_error("realization dump: truncated input");
        u |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * b);
    }
    return std::bit_cast<T>(u);
}

inline void put_vectors(std::ostream& out, const LinkVectors& v)
{
    for (const auto& z : v.data()) {
        put_le(out, static_cast<float>(z.real()));
        put_le(out, static_cast<float>(z.imag()));
    }
}

inline void get_vectors(std::istream& in, LinkVectors& v)
{
    for (auto& z : v.data()) {
        const float re = get_le<float>(in);
        const float im = get_le<float>(in);
        z = {re, im};
    }
}

} // namespace detail

inline void write_realization(std::ostream& out, const ChannelRealization& r)
{
    out.write("CFRZ", 4);
    detail::put_le<std::uint32_t>(out, 1);
    detail::put_le<std::uint64_t>(out, r.nlos.aps());
    detail::put_le<std::uint64_t>(out, r.nlos.ues());
    detail::put_le<std::uint64_t>(out, r.nlos.antennas());
    for (auto a : r.alpha.data())
        out.put(static_cast<char>(a));
    detail::put_vectors(out, r.nlos);
    out.put(static_cast<char>(r.has_estimates() ? 1 : 0));
    if (r.has_estimates())
        detail::put_vectors(out, r.est_nlos);
}

inline ChannelRealization read_realization(std::istream& in)
{
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::string_view(magic, 4) != "CFRZ")
        throw std::runtime_error("realization dump: bad magic");
    if (detail::get_le<std::uint32_t>(in) != 1)
        throw std::runtime_error("realization dump: unsupported version");
    const auto M = detail::get_le<std::uint64_t>(in);
    const auto K = detail::get_le<std::uint64_t>(in);
    const auto N = detail::get_le<std::uint64_t>(in);
    if (M == 0 || K == 0 || N == 0 || M > (1u << 20) || K > (1u << 20) || N > (1u << 10) || M * K * N > (1ull << 32))
        throw std::runtime_error("realization dump: implausible dimensions");
    ChannelRealization r;
    r.alpha = Matrix<std::uint8_t>(M, K);
    for (auto& a : r.alpha.data()) {
        const int c = in.get();
        if (c == std::char_traits<char>::eof())
            throw std::runtime_error("realization dump: truncated input");
        a = static_cast<std::uint8_t>(c);
    }
    r.nlos = LinkVectors(M, K, N);
    detail::get_vectors(in, r.nlos);
    const int flag = in.get();
    if (flag == 1) {
        r.est_nlos = LinkVectors(M, K, N);
        detail::get_vectors(in, r.est_nlos);
    } else if (flag != 0) {
        throw std::runtime_error("realization dump: bad estimate flag");
    }
    return r;
}

} // namespace cfmimo

#endif // CFMIMO_CHANNEL_HPP
