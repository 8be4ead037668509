#ifndef ADVSDE_NUMERICS_HPP
#define ADVSDE_NUMERICS_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace advsde {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Symmetric positive-definite matrix. Checked on construction.
class SpdMatrix {
public:
    SpdMatrix() = default;

    explicit SpdMatrix(Matrix m) : m_(std::move(m))
    {
        if (m_.rows() != m_.cols() || m_.rows() == 0)
            throw std::invalid_argument("SpdMatrix: matrix must be square and non-empty");
        const double scale = std::max(1.0, m_.cwiseAbs().maxCoeff());
        if ((m_ - m_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
            throw std::invalid_argument("SpdMatrix: matrix is not symmetric");
        m_ = (0.5 * (m_ + m_.transpose())).eval();
        if (!m_.allFinite()) throw std::invalid_argument("SpdMatrix: non-finite entry");
        Eigen::SelfAdjointEigenSolver<Matrix> es(m_, Eigen::EigenvaluesOnly);
        const Vector& ev = es.eigenvalues();
        if (ev.minCoeff() <= 1e-12 * std::max(ev.maxCoeff(), 0.0))
            throw std::invalid_argument("SpdMatrix: matrix is not positive definite");
    }

    static SpdMatrix identity(Eigen::Index n) { return SpdMatrix(Matrix::Identity(n, n)); }
    static SpdMatrix diagonal(const Vector& d) { return SpdMatrix(Matrix(d.asDiagonal())); }

    const Matrix& matrix() const { return m_; }
    Eigen::Index dim() const { return m_.rows(); }
    double trace() const { return m_.trace(); }

private:
    Matrix m_;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Square root of a symmetric PSD matrix; eigenvalues below zero are clipped.
inline Matrix psd_sqrt(const Matrix& m)
{
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
    Vector ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

} // namespace detail

// Reproducible stream identified by (master_seed, stream_index).
class RngStream {
public:
    RngStream(std::uint64_t master_seed, std::uint64_t stream_index)
        : master_seed_(master_seed), stream_index_(stream_index),
          engine_(detail::splitmix64(detail::splitmix64(master_seed) ^ detail::splitmix64(~stream_index)))
    {
    }

    double normal() { return normal_(engine_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double uniform() { return uniform_(engine_); }

    Vector normal_vector(Eigen::Index n)
    {
        Vector z(n);
        for (Eigen::Index i = 0; i < n; ++i) z[i] = normal_(engine_);
        return z;
    }

    void fill_normal(double* out, Eigen::Index n)
    {
        for (Eigen::Index i = 0; i < n; ++i) out[i] = normal_(engine_);
    }

    std::uint64_t index_below(std::uint64_t n)
    {
        return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
    }

    std::uint64_t master_seed() const { return master_seed_; }
    std::uint64_t stream_index() const { return stream_index_; }
    std::mt19937_64& engine() { return engine_; }

private:
    std::uint64_t master_seed_;
    std::uint64_t stream_index_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

inline RngStream rng_substream(std::uint64_t master_seed, std::uint64_t index)
{
    return RngStream(master_seed, index);
}

// Haar-distributed orthogonal matrix (QR of a Gaussian matrix, sign-fixed).
inline Matrix random_orthogonal(Eigen::Index n, RngStream& rng)
{
    Matrix g(n, n);
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < n; ++i) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ();
    Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < n; ++j)
        if (r(j, j) < 0) q.col(j) = -q.col(j);
    return q;
}

// Q diag(λ) Qᵀ with λ ~ U[lo, hi] and Haar Q.
inline SpdMatrix spd_random(Eigen::Index dim, double eig_lo, double eig_hi, RngStream& rng)
{
    if (dim <= 0) throw std::invalid_argument("spd_random: dim must be positive");
    if (!(eig_lo > 0.0) || !(eig_hi >= eig_lo))
        throw std::invalid_argument("spd_random: need 0 < eig_lo <= eig_hi");
    Vector lam(dim);
    for (Eigen::Index i = 0; i < dim; ++i) lam[i] = eig_lo + (eig_hi - eig_lo) * rng.uniform();
    Matrix q = random_orthogonal(dim, rng);
    return SpdMatrix(q * lam.asDiagonal() * q.transpose());
}

inline SpdMatrix matrix_sqrt_spd(const SpdMatrix& m)
{
    return SpdMatrix(detail::psd_sqrt(m.matrix()));
}

// Columns are draws from N(mean, cov).
inline Matrix gaussian_sample(const Vector& mean, const SpdMatrix& cov, std::size_t count, RngStream& rng)
{
    if (mean.size() != cov.dim()) throw std::invalid_argument("gaussian_sample: dimension mismatch");
    const Matrix l = matrix_sqrt_spd(cov).matrix();
    Matrix z(mean.size(), static_cast<Eigen::Index>(count));
    rng.fill_normal(z.data(), z.size());
    Matrix out = l * z;
    out.colwise() += mean;
    return out;
}

struct LogLogFit {
    double slope = 0.0;
    double intercept = 0.0;
    double residual_norm = 0.0;
};

// Least squares of log(err) on log(step).
inline LogLogFit loglog_fit(std::span<const std::pair<double, double>> points)
{
    if (points.size() < 2) throw std::invalid_argument("loglog_fit: need at least two points");
    std::vector<double> lx, ly;
    for (const auto& [h, e] : points) {
        if (!(h > 0.0) || !(e > 0.0) || !std::isfinite(h) || !std::isfinite(e))
            throw std::domain_error("loglog_fit: steps and errors must be positive and finite");
        lx.push_back(std::log(h));
        ly.push_back(std::log(e));
    }
    const double n = static_cast<double>(lx.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) { mx += lx[i]; my += ly[i]; }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
    }
    if (sxx == 0.0) throw std::domain_error("loglog_fit: steps must not all be equal");
    LogLogFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double rss = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        const double r = ly[i] - (fit.intercept + fit.slope * lx[i]);
        rss += r * r;
    }
    fit.residual_norm = std::sqrt(rss);
    return fit;
}

// Running mean / variance (Welford).
class RunningStats {
public:
    void push(double x)
    {
        ++n_;
        const double d = x - mean_;
        mean_ += d / static_cast<double>(n_);
        m2_ += d * (x - mean_);
    }
    std::size_t count() const { return n_; }
    double mean() const { return mean_; }
    double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
    double stddev() const { return std::sqrt(variance()); }
    double stderr_mean() const { return n_ > 0 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0; }

private:
    std::size_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

inline unsigned default_thread_count()
{
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : hw;
}

// Runs body(i) for i in [0, n). Each index must write only its own slot;
// callers reduce in index order so results do not depend on thread count.
template <class Body>
void parallel_for_replications(std::size_t n, Body&& body, unsigned threads = 0)
{
    if (threads == 0) threads = default_thread_count();
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += threads) body(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace advsde

#endif // ADVSDE_NUMERICS_HPP
