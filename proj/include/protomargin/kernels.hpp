#pragma once

#include <atomic>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

// Hot inner loops of the tensor engine. Every kernel exists twice: a plain
// serial reference under kernels::serial and an OpenMP version under
// kernels::omp, dispatched by a process-wide backend switch. The parallel
// versions split work over independent output elements only and keep the
// per-element accumulation order identical to the serial loop, so both
// backends produce bit-identical results at any thread count.

namespace protomargin::kernels {

enum class Backend { Serial, OpenMP };

inline std::atomic<Backend>& backend_flag() {
#ifdef _OPENMP
    static std::atomic<Backend> b{Backend::OpenMP};
#else
    static std::atomic<Backend> b{Backend::Serial};
#endif
    return b;
}

inline Backend backend() { return backend_flag().load(std::memory_order_relaxed); }
inline void set_backend(Backend b) { backend_flag().store(b, std::memory_order_relaxed); }

inline bool use_omp() {
#ifdef _OPENMP
    return backend() == Backend::OpenMP;
#else
    return false;
#endif
}

// Grain below which forking threads costs more than the loop body.
inline constexpr int64_t kParallelGrain = 4096;

/// Element-indexed loop, parallel when the active backend is OpenMP and the
/// range is large enough. f(i) must be independent across i.
template <typename F>
void parallel_for(int64_t n, F&& f) {
#ifdef _OPENMP
    if (use_omp() && n >= kParallelGrain) {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) f(i);
        return;
    }
#endif
    for (int64_t i = 0; i < n; ++i) f(i);
}

// ---------------------------------------------------------------------------
// serial reference kernels
// ---------------------------------------------------------------------------
namespace serial {

// c[M,N] = a[M,K] * b[K,N]
template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
    for (int64_t i = 0; i < M; ++i) {
        T* crow = c + i * N;
        for (int64_t j = 0; j < N; ++j) crow[j] = T(0);
        for (int64_t k = 0; k < K; ++k) {
            T aik = a[i * K + k];
            const T* brow = b + k * N;
            for (int64_t j = 0; j < N; ++j) crow[j] += aik * brow[j];
        }
    }
}

// c[M,N] = a[M,K] * b[N,K]^T  (row-row dot products)
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
    for (int64_t i = 0; i < M; ++i) {
        const T* arow = a + i * K;
        for (int64_t j = 0; j < N; ++j) {
            const T* brow = b + j * K;
            T acc = T(0);
            for (int64_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
            c[i * N + j] = acc;
        }
    }
}

// c[M,N] = a[K,M]^T * b[K,N]
template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
    for (int64_t i = 0; i < M; ++i) {
        for (int64_t j = 0; j < N; ++j) {
            T acc = T(0);
            for (int64_t k = 0; k < K; ++k) acc += a[k * M + i] * b[k * N + j];
            c[i * N + j] = acc;
        }
    }
}

// x[B,H,W,Ci] (*) w[k,k,Ci,Co] + bias[Co] -> y[B,OH,OW,Co], stride 1
template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, int64_t B, int64_t H, int64_t W,
                    int64_t Ci, int64_t Co, int64_t k, int64_t ph, int64_t pw, int64_t OH, int64_t OW) {
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t oh = 0; oh < OH; ++oh) {
            for (int64_t ow = 0; ow < OW; ++ow) {
                T* yp = y + ((b * OH + oh) * OW + ow) * Co;
                for (int64_t co = 0; co < Co; ++co) yp[co] = bias ? bias[co] : T(0);
                for (int64_t r = 0; r < k; ++r) {
                    int64_t ih = oh + r - ph;
                    if (ih < 0 || ih >= H) continue;
                    for (int64_t s = 0; s < k; ++s) {
                        int64_t iw = ow + s - pw;
                        if (iw < 0 || iw >= W) continue;
                        const T* xp = x + ((b * H + ih) * W + iw) * Ci;
                        const T* wp = w + (r * k + s) * Ci * Co;
                        for (int64_t ci = 0; ci < Ci; ++ci) {
                            T xv = xp[ci];
                            const T* wrow = wp + ci * Co;
                            for (int64_t co = 0; co < Co; ++co) yp[co] += xv * wrow[co];
                        }
                    }
                }
            }
        }
    }
}

// dx[B,H,W,Ci] += gather of dy[B,OH,OW,Co] * w
template <typename T>
void conv2d_backward_input(const T* dy, const T* w, T* dx, int64_t B, int64_t H, int64_t W, int64_t Ci,
                           int64_t Co, int64_t k, int64_t ph, int64_t pw, int64_t OH, int64_t OW) {
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t ih = 0; ih < H; ++ih) {
            for (int64_t iw = 0; iw < W; ++iw) {
                T* dxp = dx + ((b * H + ih) * W + iw) * Ci;
                for (int64_t r = 0; r < k; ++r) {
                    int64_t oh = ih - r + ph;
                    if (oh < 0 || oh >= OH) continue;
                    for (int64_t s = 0; s < k; ++s) {
                        int64_t ow = iw - s + pw;
                        if (ow < 0 || ow >= OW) continue;
                        const T* dyp = dy + ((b * OH + oh) * OW + ow) * Co;
                        const T* wp = w + (r * k + s) * Ci * Co;
                        for (int64_t ci = 0; ci < Ci; ++ci) {
                            T acc = T(0);
                            const T* wrow = wp + ci * Co;
                            for (int64_t co = 0; co < Co; ++co) acc += dyp[co] * wrow[co];
                            dxp[ci] += acc;
                        }
                    }
                }
            }
        }
    }
}

// dw[k,k,Ci,Co] += sum over batch and output positions
template <typename T>
void conv2d_backward_weight(const T* x, const T* dy, T* dw, int64_t B, int64_t H, int64_t W, int64_t Ci,
                            int64_t Co, int64_t k, int64_t ph, int64_t pw, int64_t OH, int64_t OW) {
    int64_t n_w = k * k * Ci * Co;
    for (int64_t wi = 0; wi < n_w; ++wi) {
        int64_t co = wi % Co;
        int64_t ci = (wi / Co) % Ci;
        int64_t s = (wi / (Co * Ci)) % k;
        int64_t r = wi / (Co * Ci * k);
        T acc = T(0);
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t oh = 0; oh < OH; ++oh) {
                int64_t ih = oh + r - ph;
                if (ih < 0 || ih >= H) continue;
                for (int64_t ow = 0; ow < OW; ++ow) {
                    int64_t iw = ow + s - pw;
                    if (iw < 0 || iw >= W) continue;
                    acc += x[((b * H + ih) * W + iw) * Ci + ci] * dy[((b * OH + oh) * OW + ow) * Co + co];
                }
            }
        }
        dw[wi] += acc;
    }
}

template <typename T>
void conv2d_backward_bias(const T* dy, T* db, int64_t B, int64_t OH, int64_t OW, int64_t Co) {
    for (int64_t co = 0; co < Co; ++co) {
        T acc = T(0);
        int64_t n = B * OH * OW;
        for (int64_t i = 0; i < n; ++i) acc += dy[i * Co + co];
        db[co] += acc;
    }
}

// 2x2 max pooling, stride 2, odd trailing row/column dropped. arg records the
// flat input index of each window maximum (first max wins on ties).
template <typename T>
void maxpool2x2_forward(const T* x, T* y, int64_t* arg, int64_t B, int64_t H, int64_t W, int64_t C,
                        int64_t OH, int64_t OW) {
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t oh = 0; oh < OH; ++oh) {
            for (int64_t ow = 0; ow < OW; ++ow) {
                for (int64_t c = 0; c < C; ++c) {
                    int64_t best_idx = ((b * H + oh * 2) * W + ow * 2) * C + c;
                    T best = x[best_idx];
                    for (int64_t dh = 0; dh < 2; ++dh) {
                        for (int64_t dw = 0; dw < 2; ++dw) {
                            int64_t idx = ((b * H + oh * 2 + dh) * W + ow * 2 + dw) * C + c;
                            if (x[idx] > best) {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    int64_t oidx = ((b * OH + oh) * OW + ow) * C + c;
                    y[oidx] = best;
                    arg[oidx] = best_idx;
                }
            }
        }
    }
}

template <typename T>
void maxpool2x2_backward(const T* dy, const int64_t* arg, T* dx, int64_t n_out) {
    // windows are disjoint, so the scatter is race-free
    for (int64_t i = 0; i < n_out; ++i) dx[arg[i]] += dy[i];
}

// Per-channel mean and biased variance over all leading axes; x is [rows, C].
template <typename T>
void batchnorm_stats(const T* x, T* mean, T* var, int64_t rows, int64_t C) {
    for (int64_t c = 0; c < C; ++c) {
        T m = T(0);
        for (int64_t r = 0; r < rows; ++r) m += x[r * C + c];
        m /= static_cast<T>(rows);
        T v = T(0);
        for (int64_t r = 0; r < rows; ++r) {
            T d = x[r * C + c] - m;
            v += d * d;
        }
        mean[c] = m;
        var[c] = v / static_cast<T>(rows);
    }
}

template <typename T>
void batchnorm_forward(const T* x, const T* mean, const T* inv_std, const T* gamma, const T* beta, T* y,
                       T* xhat, int64_t rows, int64_t C) {
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < C; ++c) {
            T h = (x[r * C + c] - mean[c]) * inv_std[c];
            xhat[r * C + c] = h;
            y[r * C + c] = gamma[c] * h + beta[c];
        }
    }
}

template <typename T>
void batchnorm_reduce(const T* dy, const T* xhat, T* sum_dy, T* sum_dy_xhat, int64_t rows, int64_t C) {
    for (int64_t c = 0; c < C; ++c) {
        T s = T(0), sx = T(0);
        for (int64_t r = 0; r < rows; ++r) {
            s += dy[r * C + c];
            sx += dy[r * C + c] * xhat[r * C + c];
        }
        sum_dy[c] = s;
        sum_dy_xhat[c] = sx;
    }
}

template <typename T>
void batchnorm_backward_input(const T* dy, const T* xhat, const T* inv_std, const T* gamma,
                              const T* sum_dy, const T* sum_dy_xhat, T* dx, int64_t rows, int64_t C) {
    T inv_n = T(1) / static_cast<T>(rows);
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < C; ++c) {
            int64_t i = r * C + c;
            dx[i] += gamma[c] * inv_std[c] * (dy[i] - sum_dy[c] * inv_n - xhat[i] * sum_dy_xhat[c] * inv_n);
        }
    }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP kernels. Outer loops run over independent outputs; inner accumulation
// order matches the serial reference exactly.
// ---------------------------------------------------------------------------
namespace omp {

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < M; ++i) {
        T* crow = c + i * N;
        for (int64_t j = 0; j < N; ++j) crow[j] = T(0);
        for (int64_t k = 0; k < K; ++k) {
            T aik = a[i * K + k];
            const T* brow = b + k * N;
            for (int64_t j = 0; j < N; ++j) crow[j] += aik * brow[j];
        }
    }
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < M; ++i) {
        const T* arow = a + i * K;
        for (int64_t j = 0; j < N; ++j) {
            const T* brow = b + j * K;
            T acc = T(0);
            for (int64_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
            c[i * N + j] = acc;
        }
    }
}

template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < M; ++i) {
        for (int64_t j = 0; j < N; ++j) {
            T acc = T(0);
            for (int64_t k = 0; k < K; ++k) acc += a[k * M + i] * b[k * N + j];
            c[i * N + j] = acc;
        }
    }
}

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, int64_t B, int64_t H, int64_t W,
                    int64_t Ci, int64_t Co, int64_t k, int64_t ph, int64_t pw, int64_t OH, int64_t OW) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t oh = 0; oh < OH; ++oh) {
            for (int64_t ow = 0; ow < OW; ++ow) {
                T* yp = y + ((b * OH + oh) * OW + ow) * Co;
                for (int64_t co = 0; co < Co; ++co) yp[co] = bias ? bias[co] : T(0);
                for (int64_t r = 0; r < k; ++r) {
                    int64_t ih = oh + r - ph;
                    if (ih < 0 || ih >= H) continue;
                    for (int64_t s = 0; s < k; ++s) {
                        int64_t iw = ow + s - pw;
                        if (iw < 0 || iw >= W) continue;
                        const T* xp = x + ((b * H + ih) * W + iw) * Ci;
                        const T* wp = w + (r * k + s) * Ci * Co;
                        for (int64_t ci = 0; ci < Ci; ++ci) {
                            T xv = xp[ci];
                            const T* wrow = wp + ci * Co;
                            for (int64_t co = 0; co < Co; ++co) yp[co] += xv * wrow[co];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_input(const T* dy, const T* w, T* dx, int64_t B, int64_t H, int64_t W, int64_t Ci,
                           int64_t Co, int64_t k, int64_t ph, int64_t pw, int64_t OH, int64_t OW) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t ih = 0; ih < H; ++ih) {
            for (int64_t iw = 0; iw < W; ++iw) {
                T* dxp = dx + ((b * H + ih) * W + iw) * Ci;
                for (int64_t r = 0; r < k; ++r) {
                    int64_t oh = ih - r + ph;
                    if (oh < 0 || oh >= OH) continue;
                    for (int64_t s = 0; s < k; ++s) {
                        int64_t ow = iw - s + pw;
                        if (ow < 0 || ow >= OW) continue;
                        const T* dyp = dy + ((b * OH + oh) * OW + ow) * Co;
                        const T* wp = w + (r * k + s) * Ci * Co;
                        for (int64_t ci = 0; ci < Ci; ++ci) {
                            T acc = T(0);
                            const T* wrow = wp + ci * Co;
                            for (int64_t co = 0; co < Co; ++co) acc += dyp[co] * wrow[co];
                            dxp[ci] += acc;
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_weight(const T* x, const T* dy, T* dw, int64_t B, int64_t H, int64_t W, int64_t Ci,
                            int64_t Co, int64_t k, int64_t ph, int64_t pw, int64_t OH, int64_t OW) {
    int64_t n_w = k * k * Ci * Co;
#pragma omp parallel for schedule(static)
    for (int64_t wi = 0; wi < n_w; ++wi) {
        int64_t co = wi % Co;
        int64_t ci = (wi / Co) % Ci;
        int64_t s = (wi / (Co * Ci)) % k;
        int64_t r = wi / (Co * Ci * k);
        T acc = T(0);
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t oh = 0; oh < OH; ++oh) {
                int64_t ih = oh + r - ph;
                if (ih < 0 || ih >= H) continue;
                for (int64_t ow = 0; ow < OW; ++ow) {
                    int64_t iw = ow + s - pw;
                    if (iw < 0 || iw >= W) continue;
                    acc += x[((b * H + ih) * W + iw) * Ci + ci] * dy[((b * OH + oh) * OW + ow) * Co + co];
                }
            }
        }
        dw[wi] += acc;
    }
}

template <typename T>
void conv2d_backward_bias(const T* dy, T* db, int64_t B, int64_t OH, int64_t OW, int64_t Co) {
#pragma omp parallel for schedule(static)
    for (int64_t co = 0; co < Co; ++co) {
        T acc = T(0);
        int64_t n = B * OH * OW;
        for (int64_t i = 0; i < n; ++i) acc += dy[i * Co + co];
        db[co] += acc;
    }
}

template <typename T>
void maxpool2x2_forward(const T* x, T* y, int64_t* arg, int64_t B, int64_t H, int64_t W, int64_t C,
                        int64_t OH, int64_t OW) {
#pragma omp parallel for schedule(static)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t oh = 0; oh < OH; ++oh) {
            for (int64_t ow = 0; ow < OW; ++ow) {
                for (int64_t c = 0; c < C; ++c) {
                    int64_t best_idx = ((b * H + oh * 2) * W + ow * 2) * C + c;
                    T best = x[best_idx];
                    for (int64_t dh = 0; dh < 2; ++dh) {
                        for (int64_t dw = 0; dw < 2; ++dw) {
                            int64_t idx = ((b * H + oh * 2 + dh) * W + ow * 2 + dw) * C + c;
                            if (x[idx] > best) {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    int64_t oidx = ((b * OH + oh) * OW + ow) * C + c;
                    y[oidx] = best;
                    arg[oidx] = best_idx;
                }
            }
        }
    }
}

template <typename T>
void maxpool2x2_backward(const T* dy, const int64_t* arg, T* dx, int64_t n_out) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n_out; ++i) dx[arg[i]] += dy[i];
}

template <typename T>
void batchnorm_stats(const T* x, T* mean, T* var, int64_t rows, int64_t C) {
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < C; ++c) {
        T m = T(0);
        for (int64_t r = 0; r < rows; ++r) m += x[r * C + c];
        m /= static_cast<T>(rows);
        T v = T(0);
        for (int64_t r = 0; r < rows; ++r) {
            T d = x[r * C + c] - m;
            v += d * d;
        }
        mean[c] = m;
        var[c] = v / static_cast<T>(rows);
    }
}

template <typename T>
void batchnorm_forward(const T* x, const T* mean, const T* inv_std, const T* gamma, const T* beta, T* y,
                       T* xhat, int64_t rows, int64_t C) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < C; ++c) {
            T h = (x[r * C + c] - mean[c]) * inv_std[c];
            xhat[r * C + c] = h;
            y[r * C + c] = gamma[c] * h + beta[c];
        }
    }
}

template <typename T>
void batchnorm_reduce(const T* dy, const T* xhat, T* sum_dy, T* sum_dy_xhat, int64_t rows, int64_t C) {
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < C; ++c) {
        T s = T(0), sx = T(0);
        for (int64_t r = 0; r < rows; ++r) {
            s += dy[r * C + c];
            sx += dy[r * C + c] * xhat[r * C + c];
        }
        sum_dy[c] = s;
        sum_dy_xhat[c] = sx;
    }
}

template <typename T>
void batchnorm_backward_input(const T* dy, const T* xhat, const T* inv_std, const T* gamma,
                              const T* sum_dy, const T* sum_dy_xhat, T* dx, int64_t rows, int64_t C) {
    T inv_n = T(1) / static_cast<T>(rows);
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < C; ++c) {
            int64_t i = r * C + c;
            dx[i] += gamma[c] * inv_std[c] * (dy[i] - sum_dy[c] * inv_n - xhat[i] * sum_dy_xhat[c] * inv_n);
        }
    }
}

}  // namespace omp

// ---------------------------------------------------------------------------
// backend dispatch
// ---------------------------------------------------------------------------

#define PROTOMARGIN_DISPATCH(fn, ...)       \
    do {                                    \
        if (use_omp())                      \
            omp::fn(__VA_ARGS__);           \
        else                                \
            serial::fn(__VA_ARGS__);        \
    } while (0)

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
    PROTOMARGIN_DISPATCH(matmul_nn, a, b, c, M, K, N);
}
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
    PROTOMARGIN_DISPATCH(matmul_nt, a, b, c, M, K, N);
}
template <typename T>
void matmul_tn(const T* a, const T* b, T* c, int64_t M, int64_t K, int64_t N) {
    PROTOMARGIN_DISPATCH(matmul_tn, a, b, c, M, K, N);
}
template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, int64_t B, int64_t H, int64_t W,
                    int64_t Ci, int64_t Co, int64_t k, int64_t ph, int64_t pw, int64_t OH, int64_t OW) {
    PROTOMARGIN_DISPATCH(conv2d_forward, x, w, bias, y, B, H, W, Ci, Co, k, ph, pw, OH, OW);
}
template <typename T>
void conv2d_backward_input(const T* dy, const T* w, T* dx, int64_t B, int64_t H, int64_t W, int64_t Ci,
                           int64_t Co, int64_t k, int64_t ph, int64_t pw, int64_t OH, int64_t OW) {
    PROTOMARGIN_DISPATCH(conv2d_backward_input, dy, w, dx, B, H, W, Ci, Co, k, ph, pw, OH, OW);
}
template <typename T>
void conv2d_backward_weight(const T* x, const T* dy, T* dw, int64_t B, int64_t H, int64_t W, int64_t Ci,
                            int64_t Co, int64_t k, int64_t ph, int64_t pw, int64_t OH, int64_t OW) {
    PROTOMARGIN_DISPATCH(conv2d_backward_weight, x, dy, dw, B, H, W, Ci, Co, k, ph, pw, OH, OW);
}
template <typename T>
void conv2d_backward_bias(const T* dy, T* db, int64_t B, int64_t OH, int64_t OW, int64_t Co) {
    PROTOMARGIN_DISPATCH(conv2d_backward_bias, dy, db, B, OH, OW, Co);
}
template <typename T>
void maxpool2x2_forward(const T* x, T* y, int64_t* arg, int64_t B, int64_t H, int64_t W, int64_t C,
                        int64_t OH, int64_t OW) {
    PROTOMARGIN_DISPATCH(maxpool2x2_forward, x, y, arg, B, H, W, C, OH, OW);
}
template <typename T>
void maxpool2x2_backward(const T* dy, const int64_t* arg, T* dx, int64_t n_out) {
    PROTOMARGIN_DISPATCH(maxpool2x2_backward, dy, arg, dx, n_out);
}
template <typename T>
void batchnorm_stats(const T* x, T* mean, T* var, int64_t rows, int64_t C) {
    PROTOMARGIN_DISPATCH(batchnorm_stats, x, mean, var, rows, C);
}
template <typename T>
void batchnorm_forward(const T* x, const T* mean, const T* inv_std, const T* gamma, const T* beta, T* y,
                       T* xhat, int64_t rows, int64_t C) {
    PROTOMARGIN_DISPATCH(batchnorm_forward, x, mean, inv_std, gamma, beta, y, xhat, rows, C);
}
template <typename T>
void batchnorm_reduce(const T* dy, const T* xhat, T* sum_dy, T* sum_dy_xhat, int64_t rows, int64_t C) {
    PROTOMARGIN_DISPATCH(batchnorm_reduce, dy, xhat, sum_dy, sum_dy_xhat, rows, C);
}
template <typename T>
void batchnorm_backward_input(const T* dy, const T* xhat, const T* inv_std, const T* gamma,
                              const T* sum_dy, const T* sum_dy_xhat, T* dx, int64_t rows, int64_t C) {
    PROTOMARGIN_DISPATCH(batchnorm_backward_input, dy, xhat, inv_std, gamma, sum_dy, sum_dy_xhat, dx, rows, C);
}

#undef PROTOMARGIN_DISPATCH

}  // namespace protomargin::kernels
