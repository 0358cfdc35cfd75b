#include "wase/kernels.hpp"

// Straight-line reference kernels. Accumulation order per output element
// matches the parallel versions exactly, so outputs are required to be
// bit-identical, not merely close.

namespace wase::kernels::serial {

void conv1d_fwd(const double* x, int c_in, int l_in, const double* w, int c_out, int k,
                int stride, const double* bias, double* y, int l_out) {
    for (int co = 0; co < c_out; ++co) {
        for (int lo = 0; lo < l_out; ++lo) {
            double acc = bias ? bias[co] : 0.0;
            for (int ci = 0; ci < c_in; ++ci) {
                for (int j = 0; j < k; ++j) {
                    acc += w[(static_cast<size_t>(co) * c_in + ci) * k + j] *
                           x[static_cast<size_t>(ci) * l_in + lo * stride + j];
                }
            }
            y[static_cast<size_t>(co) * l_out + lo] = acc;
        }
    }
}

void tconv1d_fwd(const double* x, int c_in, int l_in, const double* w, int c_out, int k,
                 int stride, double* y, int l_out) {
    for (int co = 0; co < c_out; ++co) {
        for (int t = 0; t < l_out; ++t) {
            // only taps with j = t mod stride contribute; walk them directly
            const int j0 = t % stride;
            double acc = 0.0;
            for (int ci = 0; ci < c_in; ++ci) {
                for (int j = j0; j < k; j += stride) {
                    if (j > t) break;
                    const int lo = (t - j) / stride;
                    if (lo < l_in) {
                        acc += x[static_cast<size_t>(ci) * l_in + lo] *
                               w[(static_cast<size_t>(ci) * c_out + co) * k + j];
                    }
                }
            }
            y[static_cast<size_t>(co) * l_out + t] = acc;
        }
    }
}

void convlike_dw(const double* gy, int a, int l_out, const double* x, int b, int l_in,
                 int k, int stride, double* gw) {
    for (int ia = 0; ia < a; ++ia) {
        for (int ib = 0; ib < b; ++ib) {
            for (int j = 0; j < k; ++j) {
                double acc = 0.0;
                for (int lo = 0; lo < l_out; ++lo) {
                    acc += gy[static_cast<size_t>(ia) * l_out + lo] *
                           x[static_cast<size_t>(ib) * l_in + lo * stride + j];
                }
                gw[(static_cast<size_t>(ia) * b + ib) * k + j] = acc;
            }
        }
    }
}

void rowsum(const double* gy, int rows, int cols, double* gb) {
    for (int r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (int c = 0; c < cols; ++c) acc += gy[static_cast<size_t>(r) * cols + c];
        gb[r] = acc;
    }
}

void dwconv_fwd(const double* x, int c, int l, const double* w, int k, int dil, double* y) {
    const int left = (k - 1) * dil / 2;
    for (int ch = 0; ch < c; ++ch) {
        for (int t = 0; t < l; ++t) {
            double acc = 0.0;
            for (int j = 0; j < k; ++j) {
                const int src = t + j * dil - left;
                if (src >= 0 && src < l) {
                    acc += w[static_cast<size_t>(ch) * k + j] * x[static_cast<size_t>(ch) * l + src];
                }
            }
            y[static_cast<size_t>(ch) * l + t] = acc;
        }
    }
}

void dwconv_dx(const double* gy, int c, int l, const double* w, int k, int dil, double* gx) {
    const int left = (k - 1) * dil / 2;
    for (int ch = 0; ch < c; ++ch) {
        for (int t = 0; t < l; ++t) {
            double acc = 0.0;
            for (int j = 0; j < k; ++j) {
                const int dst = t - j * dil + left;
                if (dst >= 0 && dst < l) {
                    acc += w[static_cast<size_t>(ch) * k + j] * gy[static_cast<size_t>(ch) * l + dst];
                }
            }
            gx[static_cast<size_t>(ch) * l + t] = acc;
        }
    }
}

void dwconv_dw(const double* gy, const double* x, int c, int l, int k, int dil, double* gw) {
    const int left = (k - 1) * dil / 2;
    for (int ch = 0; ch < c; ++ch) {
        for (int j = 0; j < k; ++j) {
            double acc = 0.0;
            for (int t = 0; t < l; ++t) {
                const int src = t + j * dil - left;
                if (src >= 0 && src < l) {
                    acc += gy[static_cast<size_t>(ch) * l + t] * x[static_cast<size_t>(ch) * l + src];
                }
            }
            gw[static_cast<size_t>(ch) * k + j] = acc;
        }
    }
}

void matmul_nn(const double* a, int m, int p, const double* b, int n, double* y) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) y[static_cast<size_t>(i) * n + j] = 0.0;
        for (int q = 0; q < p; ++q) {
            const double aq = a[static_cast<size_t>(i) * p + q];
            for (int j = 0; j < n; ++j) {
                y[static_cast<size_t>(i) * n + j] += aq * b[static_cast<size_t>(q) * n + j];
            }
        }
    }
}

void matmul_tn(const double* a, int p, int m, const double* b, int n, double* y) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) y[static_cast<size_t>(i) * n + j] = 0.0;
        for (int q = 0; q < p; ++q) {
            const double aq = a[static_cast<size_t>(q) * m + i];
            for (int j = 0; j < n; ++j) {
                y[static_cast<size_t>(i) * n + j] += aq * b[static_cast<size_t>(q) * n + j];
            }
        }
    }
}

void matmul_nt(const double* a, int m, int p, const double* b, int n, double* y) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int q = 0; q < p; ++q) {
                acc += a[static_cast<size_t>(i) * p + q] * b[static_cast<size_t>(j) * p + q];
            }
            y[static_cast<size_t>(i) * n + j] = acc;
        }
    }
}

}  // namespace wase::kernels::serial
