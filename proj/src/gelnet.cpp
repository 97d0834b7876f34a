#include "batchfx/gelnet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace batchfx {

Matrix GelnetConfig::target_or_identity(Eigen::Index p) const {
    if (target.size() == 0) return Matrix::Identity(p, p);
    return target;
}

void GelnetConfig::validate(Eigen::Index p) const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("gelnet: alpha must lie in [0, 1]");
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
        throw DomainError("gelnet: lambda must be positive and finite");
    }
    if (!(tol > 0.0)) throw DomainError("gelnet: tol must be positive");
    if (max_iter < 1) throw DomainError("gelnet: max_iter must be >= 1");
    if (target.size() != 0) {
        if (target.rows() != p || target.cols() != p) {
            throw DimensionError("gelnet: target must be p x p");
        }
        if (!target.allFinite()) throw DomainError("gelnet: non-finite target");
        const double scale = std::max(1.0, target.cwiseAbs().maxCoeff());
        if ((target - target.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
            throw DomainError("gelnet: target must be symmetric");
        }
        Eigen::SelfAdjointEigenSolver<Matrix> eig(target, Eigen::EigenvaluesOnly);
        if (eig.eigenvalues()(0) < -1e-10 * scale) {
            throw DomainError("gelnet: target must be positive semi-definite");
        }
    }
}

namespace {

void check_s(const Matrix& s) {
    if (s.rows() != s.cols() || s.rows() == 0) throw DimensionError("gelnet: S must be square");
    if (!s.allFinite()) throw DomainError("gelnet: non-finite S");
    const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
    if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
        throw DomainError("gelnet: S must be symmetric");
    }
}

double penalty(const Matrix& diff, double lambda, double alpha) {
    return lambda * (alpha * diff.cwiseAbs().sum() + 0.5 * (1.0 - alpha) * diff.squaredNorm());
}

double soft(double x, double t) {
    if (x > t) return x - t;
    if (x < -t) return x + t;
    return 0.0;
}

// Objective through a Cholesky factor; nullopt when theta is not PD.
std::optional<double> objective_llt(const Matrix& theta, const Matrix& s, const Matrix& t,
                                    double lambda, double alpha) {
    Eigen::LLT<Matrix> llt(theta);
    if (llt.info() != Eigen::Success) return std::nullopt;
    const Vector d = llt.matrixL().toDenseMatrix().diagonal();
    if (d.minCoeff() <= 0.0) return std::nullopt;
    const double log_det = 2.0 * d.array().log().sum();
    return -log_det + s.cwiseProduct(theta).sum() + penalty(theta - t, lambda, alpha);
}

double kkt(const Matrix& theta, const Matrix& grad, const Matrix& t, double lambda1) {
    double worst = 0.0;
    const Eigen::Index p = theta.rows();
    for (Eigen::Index j = 0; j < p; ++j) {
        for (Eigen::Index i = 0; i < p; ++i) {
            const double d = theta(i, j) - t(i, j);
            const double zero_tol = 1e-12 * std::max(1.0, std::abs(t(i, j)));
            double v;
            if (lambda1 == 0.0) {
                v = std::abs(grad(i, j));
            } else if (std::abs(d) <= zero_tol) {
                v = std::max(std::abs(grad(i, j)) - lambda1, 0.0);
            } else {
                v = std::abs(grad(i, j) + lambda1 * (d > 0.0 ? 1.0 : -1.0));
            }
            worst = std::max(worst, v);
        }
    }
    return worst;
}

Matrix inverse_spd(const Matrix& m) {
    Eigen::LLT<Matrix> llt(m);
    Matrix inv = llt.solve(Matrix::Identity(m.rows(), m.cols()));
    return 0.5 * (inv + inv.transpose());
}

}  // namespace

double gelnet_objective(const SpdMatrix& theta, const Matrix& s, const GelnetConfig& config) {
    const Eigen::Index p = theta.size();
    if (s.rows() != p || s.cols() != p) throw DimensionError("gelnet_objective: shape mismatch");
    config.validate(p);
    const Matrix t = config.target_or_identity(p);
    return -theta.log_det() + s.cwiseProduct(theta.entries()).sum() +
           penalty(theta.entries() - t, config.lambda, config.alpha);
}

double gelnet_objective(const Matrix& theta, const Matrix& s, const GelnetConfig& config) {
    const Eigen::Index p = theta.rows();
    if (theta.cols() != p || s.rows() != p || s.cols() != p) {
        throw DimensionError("gelnet_objective: shape mismatch");
    }
    config.validate(p);
    const auto v = objective_llt(theta, s, config.target_or_identity(p), config.lambda, config.alpha);
    if (!v) throw DomainError("gelnet_objective: theta is not positive definite");
    return *v;
}

double gelnet_kkt_residual(const Matrix& theta, const Matrix& s, const GelnetConfig& config) {
    const Eigen::Index p = theta.rows();
    config.validate(p);
    const Matrix t = config.target_or_identity(p);
    const double lambda2 = config.lambda * (1.0 - config.alpha);
    const Matrix grad = s - inverse_spd(theta) + lambda2 * (theta - t);
    return kkt(theta, grad, t, config.lambda * config.alpha);
}

PrecisionEstimate ridge_closed_form(const Matrix& s, double lambda, double tau) {
    check_s(s);
    if (!(lambda > 0.0)) throw DomainError("ridge_closed_form: lambda must be positive");
    const Eigen::Index p = s.rows();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
    Vector theta_eig(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const double b = eig.eigenvalues()(j) - lambda * tau;
        // Both forms are the positive root; the second avoids cancellation.
        const double disc = std::sqrt(b * b + 4.0 * lambda);
        theta_eig(j) = b <= 0.0 ? (-b + disc) / (2.0 * lambda) : 2.0 / (b + disc);
    }
    const Matrix& v = eig.eigenvectors();
    Matrix theta = v * theta_eig.asDiagonal() * v.transpose();
    theta = 0.5 * (theta + theta.transpose());

    GelnetConfig config;
    config.alpha = 0.0;
    config.lambda = lambda;
    config.target = tau * Matrix::Identity(p, p);
    PrecisionEstimate out{SpdMatrix(theta), config, 0.0, 0, 0.0, {}};
    out.objective = gelnet_objective(out.theta, s, config);
    out.kkt_residual = gelnet_kkt_residual(theta, s, config);
    out.objective_trace = {out.objective};
    return out;
}

PrecisionEstimate gelnet_estimate(const Matrix& s, const GelnetConfig& config) {
    check_s(s);
    const Eigen::Index p = s.rows();
    config.validate(p);
    const Matrix t = config.target_or_identity(p);
    const double lambda1 = config.lambda * config.alpha;
    const double lambda2 = config.lambda * (1.0 - config.alpha);

    Matrix theta = Matrix::Zero(p, p);
    for (Eigen::Index i = 0; i < p; ++i) theta(i, i) = 1.0 / (std::max(s(i, i), 0.0) + config.lambda);
    auto f0 = objective_llt(theta, s, t, config.lambda, config.alpha);
    double f = *f0;

    std::vector<double> trace{f};
    Matrix w, grad, d(p, p), u(p, p);
    double residual = 0.0;
    double last_rel = std::numeric_limits<double>::infinity();
    bool stalled = false;

    for (int iter = 0;; ++iter) {
        w = inverse_spd(theta);
        grad = s - w + lambda2 * (theta - t);
        residual = kkt(theta, grad, t, lambda1);

        // Tight KKT, or no further descent possible with KKT already within tol.
        // Near the optimum the objective decrease is quadratic in the residual,
        // so a small relative decrease alone is not evidence of convergence.
        const bool converged = residual <= 1e-3 * config.tol ||
                               (stalled && last_rel < config.tol && residual <= config.tol);
        if (converged) {
            PrecisionEstimate out{SpdMatrix(0.5 * (theta + theta.transpose())), config, 0.0, 0, 0.0, {}};
            out.objective = f;
            out.iterations = iter;
            out.kkt_residual = residual;
            out.objective_trace = std::move(trace);
            return out;
        }
        if (iter >= config.max_iter) {
            throw NonConvergenceError("gelnet_estimate: no convergence within max_iter", theta,
                                      residual, iter);
        }

        // Newton direction: coordinate descent on the quadratic model.
        d.setZero();
        u.setZero();  // u = d * w
        const int sweeps = std::min(1 + iter / 2, 20);
        for (int sweep = 0; sweep < sweeps; ++sweep) {
            double biggest = 0.0;
            for (Eigen::Index j = 0; j < p; ++j) {
                for (Eigen::Index i = 0; i <= j; ++i) {
                    const double c = theta(i, j) + d(i, j) - t(i, j);
                    // Skip coordinates pinned at the target with a small gradient.
                    if (lambda1 > 0.0 && c == 0.0 && d(i, j) == 0.0 &&
                        std::abs(grad(i, j)) <= lambda1) {
                        continue;
                    }
                    const double wdw = w.row(i).dot(u.col(j));
                    double a;
                    if (i == j) {
                        a = w(i, i) * w(i, i) + lambda2;
                    } else {
                        a = w(i, j) * w(i, j) + w(i, i) * w(j, j) + lambda2;
                    }
                    const double b = grad(i, j) + wdw + lambda2 * d(i, j);
                    const double z = lambda1 > 0.0 ? soft(c - b / a, lambda1 / a) : c - b / a;
                    const double mu = z - c;
                    if (mu == 0.0) continue;
                    biggest = std::max(biggest, std::abs(mu));
                    d(i, j) += mu;
                    if (i != j) {
                        d(j, i) += mu;
                        u.row(i) += mu * w.row(j);
                        u.row(j) += mu * w.row(i);
                    } else {
                        u.row(i) += mu * w.row(i);
                    }
                }
            }
            if (biggest <= 1e-14) break;
        }

        const double l1_now = (theta - t).cwiseAbs().sum();
        const double delta =
            grad.cwiseProduct(d).sum() + lambda1 * ((theta + d - t).cwiseAbs().sum() - l1_now);
        if (!(delta < 0.0)) {
            // No descent direction left; the current point is as good as it gets.
            last_rel = 0.0;
            stalled = true;
            continue;
        }

        double step = 1.0;
        bool accepted = false;
        for (int k = 0; k < 50; ++k, step *= 0.5) {
            const Matrix cand = theta + step * d;
            const auto fc = objective_llt(cand, s, t, config.lambda, config.alpha);
            if (fc && *fc < f && *fc <= f + 1e-4 * step * delta) {
                last_rel = (f - *fc) / std::max(1.0, std::abs(*fc));
                theta = cand;
                f = *fc;
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            last_rel = 0.0;
            stalled = true;
            continue;
        }
        stalled = false;
        trace.push_back(f);
    }
}

}  // namespace batchfx
