#ifndef ADVSDE_LOSS_MODELS_HPP
#define ADVSDE_LOSS_MODELS_HPP

#include "numerics.hpp"

#include <optional>
#include <variant>

namespace advsde {

// L(θ,x) = ½(θ−x)ᵀH(θ−x) − Tr H, x ~ N(0, I).
struct QuadraticModel {
    SpdMatrix H;
    Matrix H2;
    double trace_H2 = 0.0;

    explicit QuadraticModel(SpdMatrix h) : H(std::move(h)), H2(H.matrix() * H.matrix()), trace_H2(H2.trace()) {}
};

// L(θ,x) = ‖Aθ − x‖², x ~ N(μ, Σ).
struct LinearRegressionModel {
    Matrix A;
    Vector mu;
    SpdMatrix Sigma;
    Matrix Sigma_sqrt;
    std::optional<double> isotropic_alpha;

    LinearRegressionModel(Matrix a, Vector m, SpdMatrix sigma)
        : A(std::move(a)), mu(std::move(m)), Sigma(std::move(sigma))
    {
        if (A.rows() != mu.size() || Sigma.dim() != mu.size() || A.cols() == 0)
            throw std::invalid_argument("LinearRegressionModel: inconsistent dimensions");
        Sigma_sqrt = matrix_sqrt_spd(Sigma).matrix();
        if (A.cols() == 1) {
            isotropic_alpha = A.col(0).squaredNorm();
        } else {
            const Matrix aat = A * A.transpose();
            const double alpha = aat.trace() / static_cast<double>(aat.rows());
            const Matrix diff = aat - alpha * Matrix::Identity(aat.rows(), aat.cols());
            if (alpha > 0.0 && diff.cwiseAbs().maxCoeff() <= 1e-8 * alpha) isotropic_alpha = alpha;
        }
    }
};

// L = log(1 + e^z) − y z, z = b + θᵀx; y ~ Bernoulli(p), x | y ~ N(μ_y, Σ_y).
struct LogisticModel {
    double p;
    Vector mu0, mu1;
    SpdMatrix Sigma0, Sigma1;
    double bias;
    Matrix sqrt0, sqrt1;

    LogisticModel(double p_, Vector m0, Vector m1, SpdMatrix s0, SpdMatrix s1, double b)
        : p(p_), mu0(std::move(m0)), mu1(std::move(m1)), Sigma0(std::move(s0)), Sigma1(std::move(s1)), bias(b)
    {
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("LogisticModel: p must lie in [0, 1]");
        if (mu0.size() != mu1.size() || Sigma0.dim() != mu0.size() || Sigma1.dim() != mu0.size())
            throw std::invalid_argument("LogisticModel: inconsistent dimensions");
        sqrt0 = matrix_sqrt_spd(Sigma0).matrix();
        sqrt1 = matrix_sqrt_spd(Sigma1).matrix();
    }
};

using LossModel = std::variant<QuadraticModel, LinearRegressionModel, LogisticModel>;

struct DataPoint {
    Vector x;
    std::optional<int> label;
};

// Columns of x are data points; y holds labels (logistic only).
struct Batch {
    Matrix x;
    Vector y;

    std::size_t size() const { return static_cast<std::size_t>(x.cols()); }
    DataPoint point(std::size_t j) const
    {
        DataPoint d{x.col(static_cast<Eigen::Index>(j)), std::nullopt};
        if (y.size() > 0) d.label = static_cast<int>(y[static_cast<Eigen::Index>(j)]);
        return d;
    }
};

struct ModelStatistics {
    double g = 0.0;
    Vector D;
    double Hstat = 0.0;
    Matrix Sigma_theta;
    double G = 0.0;
    // Zero for closed-form models.
    double g_stderr = 0.0;
    double Hstat_stderr = 0.0;
};

struct McEstimate {
    double estimate = 0.0;
    double stderr_ = 0.0;
};

namespace detail {

inline double sigmoid(double z)
{
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double softplus(double z)
{
    return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline void require_finite(const Vector& v, const char* what)
{
    if (!v.allFinite()) throw std::domain_error(std::string(what) + ": non-finite input");
}

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

} // namespace detail

inline Eigen::Index param_dim(const LossModel& m)
{
    return std::visit(detail::overloaded{
                          [](const QuadraticModel& q) { return q.H.dim(); },
                          [](const LinearRegressionModel& l) { return l.A.cols(); },
                          [](const LogisticModel& l) { return l.mu0.size(); },
                      },
                      m);
}

inline Eigen::Index data_dim(const LossModel& m)
{
    return std::visit(detail::overloaded{
                          [](const QuadraticModel& q) { return q.H.dim(); },
                          [](const LinearRegressionModel& l) { return l.A.rows(); },
                          [](const LogisticModel& l) { return l.mu0.size(); },
                      },
                      m);
}

inline bool has_closed_form(const LossModel& m) { return !std::holds_alternative<LogisticModel>(m); }

namespace detail {

inline void check_dims(const LossModel& m, const Vector& theta, const Vector& x, const char* what)
{
    if (theta.size() != param_dim(m) || x.size() != data_dim(m))
        throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}

inline double label_of(const DataPoint& pt)
{
    if (!pt.label) throw std::invalid_argument("logistic model: data point has no label");
    return static_cast<double>(*pt.label);
}

} // namespace detail

inline double loss(const LossModel& m, const Vector& theta, const DataPoint& pt)
{
    detail::check_dims(m, theta, pt.x, "loss");
    detail::require_finite(theta, "loss");
    detail::require_finite(pt.x, "loss");
    return std::visit(detail::overloaded{
                          [&](const QuadraticModel& q) {
                              const Vector r = theta - pt.x;
                              return 0.5 * r.dot(q.H.matrix() * r) - q.H.trace();
                          },
                          [&](const LinearRegressionModel& l) { return (l.A * theta - pt.x).squaredNorm(); },
                          [&](const LogisticModel& l) {
                              const double z = l.bias + theta.dot(pt.x);
                              return detail::softplus(z) - detail::label_of(pt) * z;
                          },
                      },
                      m);
}

inline Vector grad_theta(const LossModel& m, const Vector& theta, const DataPoint& pt)
{
    detail::check_dims(m, theta, pt.x, "grad_theta");
    return std::visit(detail::overloaded{
                          [&](const QuadraticModel& q) -> Vector { return q.H.matrix() * (theta - pt.x); },
                          [&](const LinearRegressionModel& l) -> Vector {
                              return 2.0 * l.A.transpose() * (l.A * theta - pt.x);
                          },
                          [&](const LogisticModel& l) -> Vector {
                              const double z = l.bias + theta.dot(pt.x);
                              return (detail::sigmoid(z) - detail::label_of(pt)) * pt.x;
                          },
                      },
                      m);
}

inline Vector grad_x(const LossModel& m, const Vector& theta, const DataPoint& pt)
{
    detail::check_dims(m, theta, pt.x, "grad_x");
    return std::visit(detail::overloaded{
                          [&](const QuadraticModel& q) -> Vector { return q.H.matrix() * (pt.x - theta); },
                          [&](const LinearRegressionModel& l) -> Vector { return -2.0 * (l.A * theta - pt.x); },
                          [&](const LogisticModel& l) -> Vector {
                              const double z = l.bias + theta.dot(pt.x);
                              return (detail::sigmoid(z) - detail::label_of(pt)) * theta;
                          },
                      },
                      m);
}

// Entry (i, j) is ∂²L / ∂x_j ∂θ_i.
inline Matrix grad_x_theta(const LossModel& m, const Vector& theta, const DataPoint& pt)
{
    detail::check_dims(m, theta, pt.x, "grad_x_theta");
    return std::visit(detail::overloaded{
                          [&](const QuadraticModel& q) -> Matrix { return -q.H.matrix(); },
                          [&](const LinearRegressionModel& l) -> Matrix { return -2.0 * l.A.transpose(); },
                          [&](const LogisticModel& l) -> Matrix {
                              const double z = l.bias + theta.dot(pt.x);
                              const double s = detail::sigmoid(z);
                              Matrix out = s * (1.0 - s) * pt.x * theta.transpose();
                              out.diagonal().array() += s - detail::label_of(pt);
                              return out;
                          },
                      },
                      m);
}

// Mean over the batch of ∇ₓL(θ, x_j + δ).
inline Vector batch_grad_x(const LossModel& m, const Vector& theta, const Batch& batch, const Vector& delta)
{
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    return std::visit(detail::overloaded{
                          [&](const QuadraticModel& q) -> Vector {
                              const Vector xbar = batch.x.rowwise().sum() * inv_b;
                              return q.H.matrix() * (xbar + delta - theta);
                          },
                          [&](const LinearRegressionModel& l) -> Vector {
                              const Vector xbar = batch.x.rowwise().sum() * inv_b;
                              return 2.0 * (xbar + delta - l.A * theta);
                          },
                          [&](const LogisticModel& l) -> Vector {
                              double c = 0.0;
                              const double shift = l.bias + theta.dot(delta);
                              for (Eigen::Index j = 0; j < batch.x.cols(); ++j) {
                                  const double z = shift + theta.dot(batch.x.col(j));
                                  c += detail::sigmoid(z) - batch.y[j];
                              }
                              return (c * inv_b) * theta;
                          },
                      },
                      m);
}

// Mean over the batch of ∇_θL(θ, x_j + δ).
inline Vector batch_grad_theta(const LossModel& m, const Vector& theta, const Batch& batch, const Vector& delta)
{
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    return std::visit(detail::overloaded{
                          [&](const QuadraticModel& q) -> Vector {
                              const Vector xbar = batch.x.rowwise().sum() * inv_b;
                              return q.H.matrix() * (theta - xbar - delta);
                          },
                          [&](const LinearRegressionModel& l) -> Vector {
                              const Vector xbar = batch.x.rowwise().sum() * inv_b;
                              return 2.0 * l.A.transpose() * (l.A * theta - xbar - delta);
                          },
                          [&](const LogisticModel& l) -> Vector {
                              Vector acc = Vector::Zero(theta.size());
                              const double shift = l.bias + theta.dot(delta);
                              for (Eigen::Index j = 0; j < batch.x.cols(); ++j) {
                                  const double z = shift + theta.dot(batch.x.col(j));
                                  const double c = detail::sigmoid(z) - batch.y[j];
                                  acc += c * (batch.x.col(j) + delta);
                              }
                              return acc * inv_b;
                          },
                      },
                      m);
}

inline Batch sample_batch(const LossModel& m, std::size_t B, RngStream& rng)
{
    if (B == 0) throw std::invalid_argument("sample_batch: B must be positive");
    const auto n = static_cast<Eigen::Index>(B);
    Batch out;
    std::visit(detail::overloaded{
                   [&](const QuadraticModel& q) {
                       out.x.resize(q.H.dim(), n);
                       rng.fill_normal(out.x.data(), out.x.size());
                   },
                   [&](const LinearRegressionModel& l) {
                       Matrix z(l.mu.size(), n);
                       rng.fill_normal(z.data(), z.size());
                       out.x = l.Sigma_sqrt * z;
                       out.x.colwise() += l.mu;
                   },
                   [&](const LogisticModel& l) {
                       const Eigen::Index d = l.mu0.size();
                       out.x.resize(d, n);
                       out.y.resize(n);
                       Vector z(d);
                       for (Eigen::Index j = 0; j < n; ++j) {
                           const bool one = rng.uniform() < l.p;
                           rng.fill_normal(z.data(), d);
                           out.y[j] = one ? 1.0 : 0.0;
                           out.x.col(j) = one ? Vector(l.mu1 + l.sqrt1 * z) : Vector(l.mu0 + l.sqrt0 * z);
                       }
                   },
               },
               m);
    return out;
}

// Fixed-dataset mode: B draws with replacement from stored columns.
inline Batch resample_batch(const Batch& dataset, std::size_t B, RngStream& rng)
{
    if (B == 0 || dataset.size() == 0) throw std::invalid_argument("resample_batch: empty batch or dataset");
    Batch out;
    out.x.resize(dataset.x.rows(), static_cast<Eigen::Index>(B));
    if (dataset.y.size() > 0) out.y.resize(static_cast<Eigen::Index>(B));
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(B); ++j) {
        const auto k = static_cast<Eigen::Index>(rng.index_below(dataset.size()));
        out.x.col(j) = dataset.x.col(k);
        if (dataset.y.size() > 0) out.y[j] = dataset.y[k];
    }
    return out;
}

// Closed-form first and second derivatives needed to assemble SDE coefficients.
// gap(θ) = Hstat(θ) − ‖D(θ)‖².
struct PotentialDerivatives {
    Vector grad_g;
    Matrix hess_g;
    Vector grad_D2;
    Vector grad_gap;
    Matrix hess_gap;
};

inline PotentialDerivatives potential_derivatives(const LossModel& m, const Vector& theta)
{
    if (theta.size() != param_dim(m)) throw std::invalid_argument("potential_derivatives: dimension mismatch");
    const Eigen::Index n = theta.size();
    PotentialDerivatives out;
    out.grad_gap = Vector::Zero(n);
    out.hess_gap = Matrix::Zero(n, n);
    std::visit(detail::overloaded{
                   [&](const QuadraticModel& q) {
                       out.grad_g = q.H.matrix() * theta;
                       out.hess_g = q.H.matrix();
                       out.grad_D2 = 2.0 * (q.H2 * theta);
                   },
                   [&](const LinearRegressionModel& l) {
                       const Vector atr = l.A.transpose() * (l.A * theta - l.mu);
                       out.grad_g = 2.0 * atr;
                       out.hess_g = 2.0 * l.A.transpose() * l.A;
                       out.grad_D2 = 8.0 * atr;
                   },
                   [&](const LogisticModel&) {
                       throw std::invalid_argument("potential_derivatives: logistic model has no closed form");
                   },
               },
               m);
    return out;
}

// Closed-form g(θ); throws for the logistic model.
inline double expected_loss(const LossModel& m, const Vector& theta)
{
    return std::visit(detail::overloaded{
                          [&](const QuadraticModel& q) { return 0.5 * theta.dot(q.H.matrix() * theta); },
                          [&](const LinearRegressionModel& l) {
                              return (l.A * theta - l.mu).squaredNorm() + l.Sigma.trace();
                          },
                          [&](const LogisticModel&) -> double {
                              throw std::invalid_argument("expected_loss: logistic model has no closed form");
                          },
                      },
                      m);
}

// min_θ g(θ).
inline double minimum_expected_loss(const LossModel& m)
{
    return std::visit(detail::overloaded{
                          [&](const QuadraticModel&) { return 0.0; },
                          [&](const LinearRegressionModel& l) {
                              const Vector th = l.A.colPivHouseholderQr().solve(l.mu);
                              return (l.A * th - l.mu).squaredNorm() + l.Sigma.trace();
                          },
                          [&](const LogisticModel&) -> double {
                              throw std::invalid_argument("minimum_expected_loss: logistic model has no closed form");
                          },
                      },
                      m);
}

inline Matrix sigma_theta_closed_form(const LossModel& m)
{
    return std::visit(detail::overloaded{
                          [&](const QuadraticModel& q) -> Matrix { return q.H2; },
                          [&](const LinearRegressionModel& l) -> Matrix {
                              return 4.0 * l.A.transpose() * l.Sigma.matrix() * l.A;
                          },
                          [&](const LogisticModel&) -> Matrix {
                              throw std::invalid_argument("sigma_theta: logistic model has no closed form");
                          },
                      },
                      m);
}

struct McOptions {
    std::size_t n_mc = 20000;
    std::uint64_t seed = 0;
    std::uint64_t stream_index = 0;
};

inline ModelStatistics statistics(const LossModel& m, const Vector& theta, unsigned K, double beta,
                                  const McOptions& mc = {})
{
    if (!(beta > 0.0)) throw std::invalid_argument("statistics: beta must be positive");
    if (theta.size() != param_dim(m)) throw std::invalid_argument("statistics: dimension mismatch");
    ModelStatistics s;
    std::visit(detail::overloaded{
                   [&](const QuadraticModel& q) {
                       const Vector h = q.H.matrix() * theta;
                       s.g = 0.5 * theta.dot(h);
                       s.D = -h;
                       s.Hstat = h.squaredNorm() + q.trace_H2;
                       s.Sigma_theta = q.H2;
                   },
                   [&](const LinearRegressionModel& l) {
                       const Vector r = l.A * theta - l.mu;
                       const double tr = l.Sigma.trace();
                       s.g = r.squaredNorm() + tr;
                       s.D = -2.0 * r;
                       s.Hstat = 4.0 * (r.squaredNorm() + tr);
                       s.Sigma_theta = 4.0 * l.A.transpose() * l.Sigma.matrix() * l.A;
                   },
                   [&](const LogisticModel& l) {
                       if (mc.n_mc < 2) throw std::invalid_argument("statistics: n_mc must be at least 2");
                       RngStream rng(mc.seed, mc.stream_index);
                       const Batch data = sample_batch(m, mc.n_mc, rng);
                       const Eigen::Index d = theta.size();
                       RunningStats gs, hs;
                       Vector dsum = Vector::Zero(d);
                       Vector gmean = Vector::Zero(d);
                       Matrix gm2 = Matrix::Zero(d, d);
                       for (Eigen::Index j = 0; j < data.x.cols(); ++j) {
                           const double z = l.bias + theta.dot(data.x.col(j));
                           const double c = detail::sigmoid(z) - data.y[j];
                           gs.push(detail::softplus(z) - data.y[j] * z);
                           hs.push(c * c * theta.squaredNorm());
                           dsum += c * theta;
                           const Vector gt = c * data.x.col(j);
                           const Vector dev = gt - gmean;
                           gmean += dev / static_cast<double>(j + 1);
                           gm2 += dev * (gt - gmean).transpose();
                       }
                       const double n = static_cast<double>(data.x.cols());
                       s.g = gs.mean();
                       s.g_stderr = gs.stderr_mean();
                       s.D = dsum / n;
                       s.Hstat = hs.mean();
                       s.Hstat_stderr = hs.stderr_mean();
                       s.Sigma_theta = 0.5 * (gm2 + gm2.transpose()) / (n - 1.0);
                   },
               },
               m);
    s.G = s.g + static_cast<double>(K) / beta * (s.Hstat - s.D.squaredNorm());
    return s;
}

// E‖∇ₓL(θ, x)‖². Exact for closed-form models (stderr 0), Monte Carlo otherwise.
inline McEstimate robustness_criterion(const LossModel& m, const Vector& theta, std::size_t n_mc, RngStream& rng)
{
    if (n_mc < 2) throw std::invalid_argument("robustness_criterion: n_mc must be at least 2");
    if (has_closed_form(m)) return {statistics(m, theta, 0, 1.0).Hstat, 0.0};
    const auto& l = std::get<LogisticModel>(m);
    const Batch data = sample_batch(m, n_mc, rng);
    const double t2 = theta.squaredNorm();
    RunningStats rs;
    for (Eigen::Index j = 0; j < data.x.cols(); ++j) {
        const double c = detail::sigmoid(l.bias + theta.dot(data.x.col(j))) - data.y[j];
        rs.push(c * c * t2);
    }
    return {rs.mean(), rs.stderr_mean()};
}

} // namespace advsde

#endif // ADVSDE_LOSS_MODELS_HPP
