#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace advleaf::detail {

int gemm_threads();

// C[M,N] += A[M,K] * B[K,N]. The j-inner loop keeps float accumulation in
// program order, so results do not depend on vector width or thread count
// (rows are partitioned whole across workers).
inline void gemm_nn_rows(float* c, const float* a, const float* b,
                         int64_t m_begin, int64_t m_end, int64_t n, int64_t k) {
    for (int64_t i = m_begin; i < m_end; ++i) {
        float* crow = c + i * n;
        const float* arow = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const float av = arow[p];
            if (av == 0.0f) continue;
            const float* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline void parallel_rows(int64_t m, int64_t work_per_row,
                          const std::function<void(int64_t, int64_t)>& body) {
    const int threads = gemm_threads();
    if (threads <= 1 || m < 2 || m * work_per_row < (1 << 16)) {
        body(0, m);
        return;
    }
    const int workers = static_cast<int>(std::min<int64_t>(threads, m));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const int64_t chunk = (m + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const int64_t lo = w * chunk;
        const int64_t hi = std::min<int64_t>(m, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    for (auto& t : pool) t.join();
}

inline void gemm_nn(float* c, const float* a, const float* b,
                    int64_t m, int64_t n, int64_t k) {
    parallel_rows(m, n * k, [&](int64_t lo, int64_t hi) {
        gemm_nn_rows(c, a, b, lo, hi, n, k);
    });
}

// C[I,J] += A[R,I]^T * B[R,J], i.e. C[i,j] += sum_r A[r,i]*B[r,j].
inline void gemm_tn(float* c, const float* a, const float* b,
                    int64_t r, int64_t i_dim, int64_t j_dim) {
    for (int64_t t = 0; t < r; ++t) {
        const float* arow = a + t * i_dim;
        const float* brow = b + t * j_dim;
        for (int64_t i = 0; i < i_dim; ++i) {
            const float av = arow[i];
            if (av == 0.0f) continue;
            float* crow = c + i * j_dim;
            for (int64_t j = 0; j < j_dim; ++j) crow[j] += av * brow[j];
        }
    }
}

inline void transpose(const float* src, float* dst, int64_t rows, int64_t cols) {
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j)
            dst[j * rows + i] = src[i * cols + j];
}

} // namespace advleaf::detail
