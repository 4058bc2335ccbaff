#pragma once

// Independent reference computations. Nothing here calls into the library's
// numerical routines; the point is to disagree with them if they are wrong.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Softmax in long double, with the maximum subtracted.
inline std::vector<double> softmax(const std::vector<double>& z) {
    long double m = *std::max_element(z.begin(), z.end());
    std::vector<long double> e(z.size());
    long double s = 0;
    for (std::size_t i = 0; i < z.size(); ++i) s += e[i] = std::exp(static_cast<long double>(z[i]) - m);
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = static_cast<double>(e[i] / s);
    return out;
}

inline double entropy(const std::vector<double>& p) {
    long double h = 0;
    for (double v : p) {
        if (v > 0) h -= static_cast<long double>(v) * std::log(static_cast<long double>(v));
    }
    return static_cast<double>(h);
}

// Mean-field predictive written out term by term.
inline std::vector<double> meanfield(const Mat& mu, const Mat& sigma, const Vec& phi, double lambda) {
    double v = 0;
    for (Eigen::Index i = 0; i < phi.size(); ++i) {
        for (Eigen::Index j = 0; j < phi.size(); ++j) v += phi[i] * sigma(i, j) * phi[j];
    }
    const double scale = 1.0 / std::sqrt(1.0 + lambda * v);
    std::vector<double> z(static_cast<std::size_t>(mu.cols()));
    for (Eigen::Index c = 0; c < mu.cols(); ++c) {
        double s = 0;
        for (Eigen::Index i = 0; i < phi.size(); ++i) s += phi[i] * mu(i, c);
        z[static_cast<std::size_t>(c)] = s * scale;
    }
    return softmax(z);
}

inline double meanfield_nll(const Mat& mu, const Mat& sigma, const Mat& phi, const std::vector<int>& y, double lambda) {
    long double total = 0;
    for (Eigen::Index i = 0; i < phi.rows(); ++i) {
        const auto p = meanfield(mu, sigma, phi.row(i).transpose(), lambda);
        total -= std::log(static_cast<long double>(std::max(p[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])], 1e-300)));
    }
    return static_cast<double>(total / static_cast<long double>(phi.rows()));
}

// Dense grid over log10(lambda) in [lo, hi] with n points. Returns
// (best log10 lambda, grid spacing).
inline std::pair<double, double> dense_grid_argmin(const Mat& mu, const Mat& sigma, const Mat& phi, const std::vector<int>& y,
                                                   double lo = -4.0, double hi = 4.0, int n = 1000) {
    const double step = (hi - lo) / (n - 1);
    double best = std::numeric_limits<double>::infinity(), arg = lo;
    for (int k = 0; k < n; ++k) {
        const double t = lo + step * k;
        const double v = meanfield_nll(mu, sigma, phi, y, std::pow(10.0, t));
        if (v < best) best = v, arg = t;
    }
    return {arg, step};
}

// Precision sum_i w_i phi_i phi_i^T + I accumulated entry by entry.
inline Mat precision(const Mat& phi, const std::vector<double>& p_star) {
    const auto F = phi.cols();
    Mat P = Mat::Identity(F, F);
    for (Eigen::Index i = 0; i < phi.rows(); ++i) {
        const double w = p_star[static_cast<std::size_t>(i)] * (1.0 - p_star[static_cast<std::size_t>(i)]);
        for (Eigen::Index a = 0; a < F; ++a) {
            for (Eigen::Index b = 0; b < F; ++b) P(a, b) += w * phi(i, a) * phi(i, b);
        }
    }
    return P;
}

// Indices of the k largest scores, ties to the smaller id, via a full sort.
inline std::vector<std::size_t> top_k_by_sort(const std::vector<double>& score, const std::vector<std::size_t>& ids, std::size_t k) {
    std::vector<std::size_t> order(score.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return score[a] > score[b] || (score[a] == score[b] && ids[a] < ids[b]);
    });
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(ids[order[i]]);
    return out;
}

inline double sq_dist(const Mat& a, Eigen::Index i, const Mat& b, Eigen::Index j) {
    double s = 0;
    for (Eigen::Index c = 0; c < a.cols(); ++c) s += (a(i, c) - b(j, c)) * (a(i, c) - b(j, c));
    return s;
}

// Covering radius of candidate set given centers = labeled rows + chosen candidates.
inline double covering_radius(const Mat& labeled, const Mat& cand, const std::vector<std::size_t>& chosen) {
    double worst = 0;
    for (Eigen::Index i = 0; i < cand.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < labeled.rows(); ++j) best = std::min(best, sq_dist(cand, i, labeled, j));
        for (auto c : chosen) best = std::min(best, sq_dist(cand, i, cand, static_cast<Eigen::Index>(c)));
        worst = std::max(worst, best);
    }
    return std::sqrt(worst);
}

// Best covering radius over all K-subsets of the candidates.
inline double optimal_radius(const Mat& labeled, const Mat& cand, std::size_t k) {
    const auto n = static_cast<std::size_t>(cand.rows());
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> mask(n, 0);
    std::fill(mask.end() - static_cast<std::ptrdiff_t>(k), mask.end(), 1);
    do {
        std::vector<std::size_t> chosen;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask[i]) chosen.push_back(i);
        }
        best = std::min(best, covering_radius(labeled, cand, chosen));
    } while (std::next_permutation(mask.begin(), mask.end()));
    return best;
}

inline double u01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) / 9007199254740992.0; }

// Step-by-step D^2 seeding: positions into the embedding rows.
inline std::vector<std::size_t> d2_seeding(const Mat& emb, std::size_t k, std::uint64_t seed) {
    const auto n = static_cast<std::size_t>(emb.rows());
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> chosen;
    std::vector<bool> used(n, false);
    std::size_t first = static_cast<std::size_t>(u01(rng) * static_cast<double>(n));
    if (first >= n) first = n - 1;
    chosen.push_back(first);
    used[first] = true;
    while (chosen.size() < k) {
        std::vector<double> d(n, 0.0);
        double total = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (used[i]) continue;
            double m = std::numeric_limits<double>::infinity();
            for (auto c : chosen) m = std::min(m, sq_dist(emb, static_cast<Eigen::Index>(i), emb, static_cast<Eigen::Index>(c)));
            d[i] = m;
            total += m;
        }
        std::size_t pick = n;
        if (total > 0) {
            const double target = u01(rng) * total;
            double cum = 0;
            for (std::size_t i = 0; i < n && pick == n; ++i) {
                if (d[i] <= 0) continue;
                cum += d[i];
                if (cum > target) pick = i;
            }
            if (pick == n) {
                for (std::size_t i = n; i-- > 0;) {
                    if (d[i] > 0) {
                        pick = i;
                        break;
                    }
                }
            }
        } else {
            for (std::size_t i = 0; i < n && pick == n; ++i) {
                if (!used[i]) pick = i;
            }
        }
        chosen.push_back(pick);
        used[pick] = true;
    }
    return chosen;
}

// Central interval [lo, hi] holding at least `mass` of Binomial(n, p).
inline std::pair<int, int> binomial_interval(int n, double p, double mass) {
    std::vector<double> pmf(static_cast<std::size_t>(n) + 1);
    for (int k = 0; k <= n; ++k) {
        const double lg = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
        pmf[static_cast<std::size_t>(k)] = std::exp(lg + k * std::log(p) + (n - k) * std::log1p(-p));
    }
    const double tail = (1.0 - mass) / 2.0;
    int lo = 0;
    double acc = 0;
    while (acc + pmf[static_cast<std::size_t>(lo)] <= tail) acc += pmf[static_cast<std::size_t>(lo++)];
    int hi = n;
    acc = 0;
    while (acc + pmf[static_cast<std::size_t>(hi)] <= tail) acc += pmf[static_cast<std::size_t>(hi--)];
    return {lo, hi};
}

// Nearest-rank percentile with integer arithmetic on q given in hundredths.
inline bool nearest_rank(std::vector<double> v, int q_hundredths, double& out) {
    const std::size_t n = v.size();
    const std::size_t rank = (static_cast<std::size_t>(q_hundredths) * n + 9999) / 10000;
    if (rank == 0 || n == 0) return false;
    std::sort(v.begin(), v.end());
    out = v[rank - 1];
    return true;
}

}  // namespace oracle
