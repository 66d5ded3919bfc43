#pragma once

// Streaming construction of the order-3 system tensor from input-output windows.
//
// For lags (k1, k2, k3) in {1..k_max}^3 and a sub-window start tau, the window
// contributes m1 (x) m2 (x) m3 to the block (J(k1), J(k2), J(k3)), where
//   m1 = vec(y(tau + k1)           u(tau)ᵀ)
//   m2 = vec(y(tau + k1 + k2 + 1)  u(tau + k1 + 1)ᵀ)
//   m3 = vec(y(tau + k1 + k2 + k3 + 2) u(tau + k1 + k2 + 2)ᵀ)
// and J(k) = [(k-1)p, kp). Within a block, element (a, b, c) receives
// m1[a] * m2[b] * m3[c], i.e. the Kronecker product m3 ⊗ m2 ⊗ m1 in column-major
// order. vec() is column-major: vec(y uᵀ)[i + j*d] = y[i] * u[j].
//
// With i.i.d. unit-variance inputs the expected block is vec(g_k1) ∘ vec(g_k2) ∘
// vec(g_k3), so the normalized tensor is a sum of rank-one terms G ∘ G ∘ G, one
// per regime, where G stacks vec(g_1) .. vec(g_kmax).

#include "delaymix/core.hpp"
#include "delaymix/cpd.hpp"
#include "delaymix/syslin.hpp"
#include "delaymix/tensor3.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <thread>
#include <vector>

namespace delaymix {

struct MomentConfig {
    std::size_t d = 1;
    std::size_t dc = 1;
    std::size_t s = 3;
    double forgetting = 1.0;

    MomentConfig() = default;
    MomentConfig(std::size_t d_, std::size_t dc_, std::size_t s_, double forgetting_ = 1.0)
        : d(d_), dc(dc_), s(s_), forgetting(forgetting_) {}

    std::size_t k_max() const noexcept { return 2 * s; }
    std::size_t block_size() const noexcept { return d * dc; }
    std::size_t mode_size() const noexcept { return k_max() * block_size(); }
    /// Shortest window for which every lag triplet has an admissible start.
    std::size_t min_window() const noexcept { return 3 * k_max() + 3; }

    void validate() const {
        if (d < 1 || dc < 1) throw ConfigError("d and dc must be >= 1");
        if (s < 1) throw ConfigError("s must be >= 1");
        if (!(forgetting > 0.0 && forgetting <= 1.0)) throw ConfigError("forgetting must lie in (0, 1]");
    }

    friend bool operator==(const MomentConfig&, const MomentConfig&) = default;
};

class SystemTensor {
public:
    static constexpr std::size_t default_capacity = 256;

    explicit SystemTensor(const MomentConfig& config, std::size_t max_mode_size = default_capacity)
        : config_(config) {
        config_.validate();
        if (config_.mode_size() > max_mode_size) {
            throw CapacityError("mode size D = " + std::to_string(config_.mode_size()) +
                                " exceeds the cap of " + std::to_string(max_mode_size));
        }
        data_ = Tensor3(config_.mode_size());
        const std::size_t k = config_.k_max();
        block_weight_.assign(k * k * k, 0.0);
    }

    const MomentConfig& config() const noexcept { return config_; }
    const Tensor3& data() const noexcept { return data_; }
    std::uint64_t sample_count() const noexcept { return sample_count_; }
    std::size_t dim() const noexcept { return data_.dim(); }

    /// Discounted number of contributions accumulated into block (k1, k2, k3), 1-based lags.
    double block_weight(std::size_t k1, std::size_t k2, std::size_t k3) const {
        return block_weight_.at(block_index(k1, k2, k3));
    }
    const std::vector<double>& block_weights() const noexcept { return block_weight_; }

    /// Bytes held by the tensor state; independent of how much data was seen.
    std::size_t footprint_bytes() const noexcept {
        return sizeof(*this) + data_.size() * sizeof(double) + block_weight_.size() * sizeof(double);
    }

private:
    std::size_t block_index(std::size_t k1, std::size_t k2, std::size_t k3) const {
        const std::size_t k = config_.k_max();
        return ((k1 - 1) * k + (k2 - 1)) * k + (k3 - 1);
    }

    MomentConfig config_;
    Tensor3 data_;
    std::vector<double> block_weight_;
    std::uint64_t sample_count_ = 0;

    friend void accumulate_window(SystemTensor&, const Trajectory&);
    friend void write_snapshot(std::ostream&, const SystemTensor&);
    friend SystemTensor read_snapshot(std::istream&);
};

inline SystemTensor new_tensor(const MomentConfig& config,
                               std::size_t max_mode_size = SystemTensor::default_capacity) {
    return SystemTensor(config, max_mode_size);
}

/// Number of admissible sub-window starts for one lag triplet in a window of length lc.
inline std::size_t admissible_starts(std::size_t lc, std::size_t k1, std::size_t k2, std::size_t k3) {
    const std::size_t span = k1 + k2 + k3 + 2;
    return lc > span ? lc - span : 0;
}

inline void accumulate_window(SystemTensor& tensor, const Trajectory& window) {
    const MomentConfig& cfg = tensor.config_;
    const std::size_t lc = window.length();
    if (lc < cfg.min_window()) {
        throw PreconditionError("window length " + std::to_string(lc) + " is below the required " +
                                std::to_string(cfg.min_window()));
    }
    if (window.output_dim() != cfg.d || window.input_dim() != cfg.dc) {
        throw ShapeError("window dimensions do not match the moment configuration");
    }
    const auto kmax = static_cast<Eigen::Index>(cfg.k_max());
    const auto p = static_cast<Eigen::Index>(cfg.block_size());
    const auto dim = static_cast<Eigen::Index>(cfg.mode_size());
    const auto d = static_cast<Eigen::Index>(cfg.d);
    const auto dc = static_cast<Eigen::Index>(cfg.dc);
    const auto T = static_cast<Eigen::Index>(lc);
    const Matrix& y = window.outputs;
    const Matrix& u = window.inputs;

    // lagged[k-1] column s = vec(y(s + k) u(s)ᵀ)
    std::vector<Matrix> lagged(static_cast<std::size_t>(kmax));
    for (Eigen::Index k = 1; k <= kmax; ++k) {
        Matrix& m = lagged[static_cast<std::size_t>(k - 1)];
        m.resize(p, T - k);
        for (Eigen::Index s = 0; s + k < T; ++s) {
            for (Eigen::Index j = 0; j < dc; ++j) {
                m.col(s).segment(j * d, d) = y.col(s + k) * u(j, s);
            }
        }
    }

    if (cfg.forgetting != 1.0) {
        tensor.data_ *= cfg.forgetting;
        for (auto& w : tensor.block_weight_) w *= cfg.forgetting;
    }

    // Each k1 owns the disjoint slab of mode-1 rows J(k1), so slabs can be
    // filled concurrently without changing the summation order.
    auto fill_slab = [&](Eigen::Index k1) {
        Matrix kr;
        for (Eigen::Index k2 = 1; k2 <= kmax; ++k2) {
            for (Eigen::Index k3 = 1; k3 <= kmax; ++k3) {
                const auto n = static_cast<Eigen::Index>(admissible_starts(lc, static_cast<std::size_t>(k1),
                                                                           static_cast<std::size_t>(k2),
                                                                           static_cast<std::size_t>(k3)));
                const auto m1 = lagged[static_cast<std::size_t>(k1 - 1)].middleCols(0, n);
                const auto m2 = lagged[static_cast<std::size_t>(k2 - 1)].middleCols(k1 + 1, n);
                const auto m3 = lagged[static_cast<std::size_t>(k3 - 1)].middleCols(k1 + k2 + 2, n);
                // kr row (b*p + c), column tau = m2[b] * m3[c]
                kr.resize(p * p, n);
                for (Eigen::Index b = 0; b < p; ++b) {
                    kr.middleRows(b * p, p) = m3.array().rowwise() * m2.row(b).array();
                }
                const Matrix block = m1 * kr.transpose(); // p x p^2
                for (Eigen::Index a = 0; a < p; ++a) {
                    double* row = tensor.data_.data() + ((k1 - 1) * p + a) * dim * dim;
                    for (Eigen::Index b = 0; b < p; ++b) {
                        double* dst = row + ((k2 - 1) * p + b) * dim + (k3 - 1) * p;
                        for (Eigen::Index c = 0; c < p; ++c) dst[c] += block(a, b * p + c);
                    }
                }
            }
        }
    };

    const std::size_t workers = std::min<std::size_t>(worker_count(), static_cast<std::size_t>(kmax));
    const bool parallel = workers > 1 && static_cast<double>(dim) * dim * dim * static_cast<double>(lc) > 2e6;
    if (parallel) {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (auto k1 = static_cast<Eigen::Index>(w + 1); k1 <= kmax;
                     k1 += static_cast<Eigen::Index>(workers)) {
                    fill_slab(k1);
                }
            });
        }
    } else {
        for (Eigen::Index k1 = 1; k1 <= kmax; ++k1) fill_slab(k1);
    }

    const std::size_t k = cfg.k_max();
    for (std::size_t k1 = 1; k1 <= k; ++k1) {
        for (std::size_t k2 = 1; k2 <= k; ++k2) {
            for (std::size_t k3 = 1; k3 <= k; ++k3) {
                const std::size_t n = admissible_starts(lc, k1, k2, k3);
                tensor.block_weight_[tensor.block_index(k1, k2, k3)] += static_cast<double>(n);
                tensor.sample_count_ += n;
            }
        }
    }
}

/// Each block divided by its discounted contribution count. Pure.
inline Tensor3 normalized_view(const SystemTensor& tensor) {
    if (tensor.sample_count() == 0) throw EmptyTensorError("system tensor has no contributions yet");
    const MomentConfig& cfg = tensor.config();
    const std::size_t p = cfg.block_size();
    const std::size_t k = cfg.k_max();
    const std::size_t dim = cfg.mode_size();
    Tensor3 out(dim);
    const Tensor3& src = tensor.data();
    for (std::size_t k1 = 1; k1 <= k; ++k1) {
        for (std::size_t k2 = 1; k2 <= k; ++k2) {
            for (std::size_t k3 = 1; k3 <= k; ++k3) {
                const double w = tensor.block_weight(k1, k2, k3);
                const double inv = w > 0.0 ? 1.0 / w : 0.0;
                for (std::size_t a = (k1 - 1) * p; a < k1 * p; ++a) {
                    for (std::size_t b = (k2 - 1) * p; b < k2 * p; ++b) {
                        for (std::size_t c = (k3 - 1) * p; c < k3 * p; ++c) out(a, b, c) = src(a, b, c) * inv;
                    }
                }
            }
        }
    }
    return out;
}

/// Relative Frobenius residual of the factors against the normalized tensor.
inline double mismatch_trigger(const SystemTensor& tensor, const CPFactors& factors) {
    const Tensor3 view = normalized_view(tensor);
    const double norm = view.frobenius_norm();
    if (norm == 0.0) throw EmptyTensorError("normalized tensor has zero norm");
    if (factors.dim() != view.dim()) throw ShapeError("factors are not dimensioned for this tensor");
    return (view - reconstruct(factors, view.dim())).frobenius_norm() / norm;
}

// =============================================================================
// Snapshot serialization
// =============================================================================
//
// Little-endian layout:
//   u32 format_version, u32 d, u32 dc, u32 s, f64 forgetting, u64 sample_count,
//   f64 block_weight[k_max^3], f64 data[D^3]

inline constexpr std::uint32_t snapshot_format_version = 1;

namespace detail {

template <typename T>
void write_le(std::ostream& os, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char bytes[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw FormatError("unexpected end of stream");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

} // namespace detail

inline void write_snapshot(std::ostream& os, const SystemTensor& tensor) {
    const MomentConfig& cfg = tensor.config_;
    detail::write_le<std::uint32_t>(os, snapshot_format_version);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.d));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.dc));
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.s));
    detail::write_le<double>(os, cfg.forgetting);
    detail::write_le<std::uint64_t>(os, tensor.sample_count_);
    for (double w : tensor.block_weight_) detail::write_le<double>(os, w);
    for (double v : tensor.data_.values()) detail::write_le<double>(os, v);
}

inline SystemTensor read_snapshot(std::istream& is) {
    const auto version = detail::read_le<std::uint32_t>(is);
    if (version != snapshot_format_version) {
        throw FormatError("unsupported tensor snapshot version " + std::to_string(version));
    }
    MomentConfig cfg;
    cfg.d = detail::read_le<std::uint32_t>(is);
    cfg.dc = detail::read_le<std::uint32_t>(is);
    cfg.s = detail::read_le<std::uint32_t>(is);
    cfg.forgetting = detail::read_le<double>(is);
    SystemTensor tensor(cfg, std::max(cfg.mode_size(), SystemTensor::default_capacity));
    tensor.sample_count_ = detail::read_le<std::uint64_t>(is);
    for (auto& w : tensor.block_weight_) w = detail::read_le<double>(is);
    for (auto& v : tensor.data_.values()) v = detail::read_le<double>(is);
    return tensor;
}

} // namespace delaymix
