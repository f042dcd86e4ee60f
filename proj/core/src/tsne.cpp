#include <algorithm>
#include <cmath>
#include <limits>

#include "advleaf/explain.hpp"

namespace advleaf::explain {

namespace {

// Squared Euclidean distances between rows of [n,d].
std::vector<double> pairwise_sq_dists(const float* x, int64_t n, int64_t d) {
    std::vector<double> dist(static_cast<size_t>(n) * n, 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = i + 1; j < n; ++j) {
            double acc = 0.0;
            const float* a = x + i * d;
            const float* b = x + j * d;
            for (int64_t t = 0; t < d; ++t) {
                const double diff = static_cast<double>(a[t]) - b[t];
                acc += diff * diff;
            }
            dist[static_cast<size_t>(i) * n + j] = acc;
            dist[static_cast<size_t>(j) * n + i] = acc;
        }
    return dist;
}

struct Calibration {
    std::vector<double> p;       ///< conditional P(j|i), row-major, diag 0
    std::vector<double> entropy; ///< per-point entropy in nats
};

// Binary search for beta_i = 1/(2 sigma_i^2) until the conditional entropy
// H(P_i) matches ln(perplexity) within `tol` nats.
Calibration calibrate(const std::vector<double>& dist, int64_t n, double perplexity,
                      double tol) {
    Calibration cal;
    cal.p.assign(static_cast<size_t>(n) * n, 0.0);
    cal.entropy.assign(static_cast<size_t>(n), 0.0);
    const double target = std::log(perplexity);

    for (int64_t i = 0; i < n; ++i) {
        double beta = 1.0, beta_min = 0.0, beta_max = std::numeric_limits<double>::infinity();
        double h = 0.0;
        std::vector<double> row(static_cast<size_t>(n));
        for (int iter = 0; iter < 200; ++iter) {
            double sum = 0.0;
            for (int64_t j = 0; j < n; ++j) {
                row[static_cast<size_t>(j)] =
                    j == i ? 0.0 : std::exp(-beta * dist[static_cast<size_t>(i) * n + j]);
                sum += row[static_cast<size_t>(j)];
            }
            if (sum <= 0.0) sum = 1e-300;
            double hsum = 0.0;
            for (int64_t j = 0; j < n; ++j) {
                const double pj = row[static_cast<size_t>(j)] / sum;
                row[static_cast<size_t>(j)] = pj;
                if (pj > 1e-300) hsum -= pj * std::log(pj);
            }
            h = hsum;
            const double diff = h - target;
            if (std::fabs(diff) < tol) break;
            if (diff > 0.0) { // entropy too high -> sharpen
                beta_min = beta;
                beta = std::isinf(beta_max) ? beta * 2.0 : (beta + beta_max) / 2.0;
            } else {
                beta_max = beta;
                beta = (beta + beta_min) / 2.0;
            }
        }
        for (int64_t j = 0; j < n; ++j)
            cal.p[static_cast<size_t>(i) * n + j] = row[static_cast<size_t>(j)];
        cal.entropy[static_cast<size_t>(i)] = h;
    }
    return cal;
}

void check_features(const Tensor& features, double perplexity) {
    if (features.shape().size() != 2)
        throw ShapeError("tsne: features must be [N,D], got " + shape_str(features.shape()));
    if (features.dim(1) < 2)
        throw ConfigError("tsne: feature dimension must be >= 2");
    if (perplexity <= 0.0) throw ConfigError("tsne: perplexity must be positive");
    if (features.dim(0) < 5.0 * perplexity)
        throw ConfigError("tsne: need at least 5*perplexity = " +
                          std::to_string(static_cast<int>(5.0 * perplexity)) +
                          " points, got " + std::to_string(features.dim(0)));
}

} // namespace

std::vector<double> tsne_calibration_entropies(const Tensor& features, double perplexity) {
    check_features(features, perplexity);
    const int64_t n = features.dim(0), d = features.dim(1);
    const auto dist = pairwise_sq_dists(features.data().data(), n, d);
    return calibrate(dist, n, perplexity, 1e-4).entropy;
}

Embedding2D tsne_embed(const Tensor& features, const TsneConfig& cfg,
                       const std::vector<int>& labels) {
    check_features(features, cfg.perplexity);
    if (cfg.iterations < 1) throw ConfigError("tsne: iterations must be >= 1");
    const int64_t n = features.dim(0), d = features.dim(1);
    if (!labels.empty() && static_cast<int64_t>(labels.size()) != n)
        throw ShapeError("tsne: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " points");

    const auto dist = pairwise_sq_dists(features.data().data(), n, d);
    const auto cal = calibrate(dist, n, cfg.perplexity, 1e-4);

    // symmetrised joint distribution
    std::vector<double> p(static_cast<size_t>(n) * n, 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j)
            p[static_cast<size_t>(i) * n + j] =
                std::max((cal.p[static_cast<size_t>(i) * n + j] +
                          cal.p[static_cast<size_t>(j) * n + i]) /
                             (2.0 * static_cast<double>(n)),
                         1e-12);

    Rng rng(cfg.seed);
    std::vector<double> y(static_cast<size_t>(n) * 2);
    for (auto& v : y) v = 1e-2 * rng.normal();
    std::vector<double> velocity(static_cast<size_t>(n) * 2, 0.0);
    std::vector<double> q(static_cast<size_t>(n) * n, 0.0);
    std::vector<double> grad(static_cast<size_t>(n) * 2, 0.0);

    double kl = 0.0;
    for (int iter = 0; iter < cfg.iterations; ++iter) {
        const double exaggeration = iter < cfg.exaggeration_iters ? cfg.exaggeration : 1.0;
        const double momentum =
            iter < cfg.exaggeration_iters ? cfg.initial_momentum : cfg.final_momentum;

        // Student-t kernel
        double qsum = 0.0;
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = i + 1; j < n; ++j) {
                const double dy0 = y[static_cast<size_t>(i) * 2] - y[static_cast<size_t>(j) * 2];
                const double dy1 =
                    y[static_cast<size_t>(i) * 2 + 1] - y[static_cast<size_t>(j) * 2 + 1];
                const double w = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                q[static_cast<size_t>(i) * n + j] = w;
                q[static_cast<size_t>(j) * n + i] = w;
                qsum += 2.0 * w;
            }
        qsum = std::max(qsum, 1e-300);

        std::fill(grad.begin(), grad.end(), 0.0);
        kl = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            for (int64_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double pij = p[static_cast<size_t>(i) * n + j];
                const double w = q[static_cast<size_t>(i) * n + j];
                const double qij = std::max(w / qsum, 1e-300);
                if (j > i) kl += 2.0 * pij * std::log(pij / qij);
                const double mult = (exaggeration * pij - qij) * w;
                const double dy0 = y[static_cast<size_t>(i) * 2] - y[static_cast<size_t>(j) * 2];
                const double dy1 =
                    y[static_cast<size_t>(i) * 2 + 1] - y[static_cast<size_t>(j) * 2 + 1];
                grad[static_cast<size_t>(i) * 2] += 4.0 * mult * dy0;
                grad[static_cast<size_t>(i) * 2 + 1] += 4.0 * mult * dy1;
            }
        }

        for (size_t t = 0; t < y.size(); ++t) {
            velocity[t] = momentum * velocity[t] - cfg.learning_rate * grad[t];
            y[t] += velocity[t];
        }
        // keep the embedding centred
        double mean0 = 0.0, mean1 = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            mean0 += y[static_cast<size_t>(i) * 2];
            mean1 += y[static_cast<size_t>(i) * 2 + 1];
        }
        mean0 /= static_cast<double>(n);
        mean1 /= static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) {
            y[static_cast<size_t>(i) * 2] -= mean0;
            y[static_cast<size_t>(i) * 2 + 1] -= mean1;
        }
    }

    Embedding2D emb;
    emb.points.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        emb.points[static_cast<size_t>(i)] = {static_cast<float>(y[static_cast<size_t>(i) * 2]),
                                              static_cast<float>(y[static_cast<size_t>(i) * 2 + 1])};
    emb.labels = labels;
    emb.kl = kl;
    emb.iterations = cfg.iterations;
    for (const auto& pt : emb.points)
        if (!std::isfinite(pt[0]) || !std::isfinite(pt[1]))
            throw NumericError("tsne: embedding diverged to non-finite coordinates");
    return emb;
}

} // namespace advleaf::explain
