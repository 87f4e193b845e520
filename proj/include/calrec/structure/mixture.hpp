#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "calrec/core.hpp"
#include "calrec/distribution.hpp"
#include "calrec/structure/labeling.hpp"
#include "calrec/structure/partitional.hpp"

namespace calrec {

struct GaussianMixture {
    Eigen::VectorXd weights;
    std::vector<Eigen::RowVectorXd> means;
    std::vector<Eigen::LLT<Eigen::MatrixXd>> chol;  // of each covariance
    double mean_log_likelihood = -std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
};

namespace detail {

/// M-step from responsibilities; covariances get `reg` on the diagonal.
inline void gmm_m_step(const Matrix& X, const Matrix& resp, double reg, GaussianMixture& g) {
    const Eigen::Index n = X.rows(), d = X.cols(), k = resp.cols();
    g.weights.resize(k);
    g.means.assign(static_cast<std::size_t>(k), Eigen::RowVectorXd::Zero(d));
    g.chol.clear();
    const double tiny = 10.0 * std::numeric_limits<double>::epsilon();
    for (Eigen::Index c = 0; c < k; ++c) {
        const double nk = resp.col(c).sum() + tiny;
        g.weights[c] = nk / static_cast<double>(n);
        Eigen::RowVectorXd mu = (resp.col(c).transpose() * X) / nk;
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double r = resp(i, c);
            if (r == 0.0) continue;
            Eigen::RowVectorXd diff = X.row(i) - mu;
            cov.noalias() += r * diff.transpose() * diff;
        }
        cov /= nk;
        cov.diagonal().array() += reg;
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() != Eigen::Success) throw DataError("gaussian_mixture: singular covariance despite regularisation");
        g.means[static_cast<std::size_t>(c)] = mu;
        g.chol.push_back(std::move(llt));
    }
}

/// Log of weight_c * N(x_i | mu_c, Sigma_c) for every (i, c).
inline Matrix gmm_log_joint(const Matrix& X, const GaussianMixture& g) {
    const Eigen::Index n = X.rows(), d = X.cols(), k = g.weights.size();
    Matrix out(n, k);
    const double log2pi = std::log(2.0 * std::numbers::pi);
    for (Eigen::Index c = 0; c < k; ++c) {
        const auto& llt = g.chol[static_cast<std::size_t>(c)];
        const Eigen::MatrixXd L = llt.matrixL();
        const double log_det = 2.0 * L.diagonal().array().log().sum();
        Eigen::MatrixXd diff = (X.rowwise() - g.means[static_cast<std::size_t>(c)]).transpose();
        llt.matrixL().solveInPlace(diff);
        const Eigen::VectorXd maha = diff.colwise().squaredNorm().transpose();
        for (Eigen::Index i = 0; i < n; ++i)
            out(i, c) = std::log(g.weights[c]) - 0.5 * (static_cast<double>(d) * log2pi + log_det + maha[i]);
    }
    return out;
}

}  // namespace detail

/// EM for a full-covariance Gaussian mixture, initialised from k-means.
/// Stops when the mean log-likelihood changes by less than `tol`.
inline GaussianMixture fit_gmm(const Matrix& X, int k, std::mt19937_64& rng, std::vector<int>* labels = nullptr,
                               double reg = 1e-6, double tol = 1e-4, int max_iter = 200) {
    const Eigen::Index n = X.rows();
    if (k < 1 || k > n) throw DataError("gaussian_mixture: need 1 <= n_components <= n");
    GaussianMixture g;
    Matrix resp = Matrix::Zero(n, k);
    {
        auto init = kmeans(X, k, rng);
        for (Eigen::Index i = 0; i < n; ++i) resp(i, init.labels[i]) = 1.0;
    }
    detail::gmm_m_step(X, resp, reg, g);
    for (int it = 0; it < max_iter; ++it) {
        ++g.iterations;
        Matrix lj = detail::gmm_log_joint(X, g);
        double total = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double mx = lj.row(i).maxCoeff();
            const double lse = mx + std::log((lj.row(i).array() - mx).exp().sum());
            resp.row(i) = (lj.row(i).array() - lse).exp();
            total += lse;
        }
        const double ll = total / static_cast<double>(n);
        const bool done = std::abs(ll - g.mean_log_likelihood) < tol;
        g.mean_log_likelihood = ll;
        if (done) {
            g.converged = true;
            break;
        }
        detail::gmm_m_step(X, resp, reg, g);
    }
    if (labels) {
        Matrix lj = detail::gmm_log_joint(X, g);
        labels->resize(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::Index best = 0;
            lj.row(i).maxCoeff(&best);
            (*labels)[i] = static_cast<int>(best);
        }
    }
    return g;
}

inline Labeling fit_gaussian_mixture(int n_components, const DistributionMatrix& X, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<int> labels;
    fit_gmm(X.data, n_components, rng, &labels);
    AlgorithmConfig cfg;
    cfg.n_components = n_components;
    return make_labeling(X.rows, std::move(labels), Algorithm::gaussian_mixture, cfg);
}

}  // namespace calrec
