#include "wase/kernels.hpp"

namespace wase::kernels {

void conv1d_fwd(const double* x, int c_in, int l_in, const double* w, int c_out, int k,
                int stride, const double* bias, double* y, int l_out) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < c_out; ++co) {
        double* yrow = y + static_cast<size_t>(co) * l_out;
        const double b = bias ? bias[co] : 0.0;
        for (int lo = 0; lo < l_out; ++lo) yrow[lo] = b;
        for (int ci = 0; ci < c_in; ++ci) {
            const double* xrow = x + static_cast<size_t>(ci) * l_in;
            const double* wrow = w + (static_cast<size_t>(co) * c_in + ci) * k;
            for (int j = 0; j < k; ++j) {
                const double wj = wrow[j];
                for (int lo = 0; lo < l_out; ++lo) {
                    yrow[lo] += wj * xrow[lo * stride + j];
                }
            }
        }
    }
}

void tconv1d_fwd(const double* x, int c_in, int l_in, const double* w, int c_out, int k,
                 int stride, double* y, int l_out) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < c_out; ++co) {
        double* yrow = y + static_cast<size_t>(co) * l_out;
        for (int t = 0; t < l_out; ++t) {
            // only taps with j = t mod stride contribute; walk them directly
            const int j0 = t % stride;
            double acc = 0.0;
            for (int ci = 0; ci < c_in; ++ci) {
                const double* xrow = x + static_cast<size_t>(ci) * l_in;
                const double* wrow = w + (static_cast<size_t>(ci) * c_out + co) * k;
                for (int j = j0; j < k; j += stride) {
                    if (j > t) break;
                    const int lo = (t - j) / stride;
                    if (lo < l_in) acc += xrow[lo] * wrow[j];
                }
            }
            yrow[t] = acc;
        }
    }
}

void convlike_dw(const double* gy, int a, int l_out, const double* x, int b, int l_in,
                 int k, int stride, double* gw) {
#pragma omp parallel for schedule(static)
    for (int ia = 0; ia < a; ++ia) {
        const double* grow = gy + static_cast<size_t>(ia) * l_out;
        for (int ib = 0; ib < b; ++ib) {
            const double* xrow = x + static_cast<size_t>(ib) * l_in;
            double* wrow = gw + (static_cast<size_t>(ia) * b + ib) * k;
            for (int j = 0; j < k; ++j) {
                double acc = 0.0;
                for (int lo = 0; lo < l_out; ++lo) acc += grow[lo] * xrow[lo * stride + j];
                wrow[j] = acc;
            }
        }
    }
}

void rowsum(const double* gy, int rows, int cols, double* gb) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const double* row = gy + static_cast<size_t>(r) * cols;
        double acc = 0.0;
        for (int c = 0; c < cols; ++c) acc += row[c];
        gb[r] = acc;
    }
}

void dwconv_fwd(const double* x, int c, int l, const double* w, int k, int dil, double* y) {
    const int left = (k - 1) * dil / 2;
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        const double* xrow = x + static_cast<size_t>(ch) * l;
        const double* wrow = w + static_cast<size_t>(ch) * k;
        double* yrow = y + static_cast<size_t>(ch) * l;
        for (int t = 0; t < l; ++t) {
            double acc = 0.0;
            for (int j = 0; j < k; ++j) {
                const int src = t + j * dil - left;
                if (src >= 0 && src < l) acc += wrow[j] * xrow[src];
            }
            yrow[t] = acc;
        }
    }
}

void dwconv_dx(const double* gy, int c, int l, const double* w, int k, int dil, double* gx) {
    const int left = (k - 1) * dil / 2;
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        const double* grow = gy + static_cast<size_t>(ch) * l;
        const double* wrow = w + static_cast<size_t>(ch) * k;
        double* xrow = gx + static_cast<size_t>(ch) * l;
        for (int t = 0; t < l; ++t) {
            double acc = 0.0;
            for (int j = 0; j < k; ++j) {
                const int dst = t - j * dil + left;
                if (dst >= 0 && dst < l) acc += wrow[j] * grow[dst];
            }
            xrow[t] = acc;
        }
    }
}

void dwconv_dw(const double* gy, const double* x, int c, int l, int k, int dil, double* gw) {
    const int left = (k - 1) * dil / 2;
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        const double* grow = gy + static_cast<size_t>(ch) * l;
        const double* xrow = x + static_cast<size_t>(ch) * l;
        double* wrow = gw + static_cast<size_t>(ch) * k;
        for (int j = 0; j < k; ++j) {
            double acc = 0.0;
            const int off = j * dil - left;
            for (int t = 0; t < l; ++t) {
                const int src = t + off;
                if (src >= 0 && src < l) acc += grow[t] * xrow[src];
            }
            wrow[j] = acc;
        }
    }
}

void matmul_nn(const double* a, int m, int p, const double* b, int n, double* y) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        double* yrow = y + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) yrow[j] = 0.0;
        const double* arow = a + static_cast<size_t>(i) * p;
        for (int q = 0; q < p; ++q) {
            const double aq = arow[q];
            const double* brow = b + static_cast<size_t>(q) * n;
            for (int j = 0; j < n; ++j) yrow[j] += aq * brow[j];
        }
    }
}

void matmul_tn(const double* a, int p, int m, const double* b, int n, double* y) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        double* yrow = y + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) yrow[j] = 0.0;
        for (int q = 0; q < p; ++q) {
            const double aq = a[static_cast<size_t>(q) * m + i];
            const double* brow = b + static_cast<size_t>(q) * n;
            for (int j = 0; j < n; ++j) yrow[j] += aq * brow[j];
        }
    }
}

void matmul_nt(const double* a, int m, int p, const double* b, int n, double* y) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * p;
        double* yrow = y + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<size_t>(j) * p;
            double acc = 0.0;
            for (int q = 0; q < p; ++q) acc += arow[q] * brow[q];
            yrow[j] = acc;
        }
    }
}

}  // namespace wase::kernels
