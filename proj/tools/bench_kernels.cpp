#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "wase/kernels.hpp"

// Times the OpenMP kernels against their serial references on desk-preset
// shapes and verifies the bit-identical contract while at it.

namespace {

using clock_type = std::chrono::steady_clock;

std::vector<double> rand_vec(size_t n, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    return v;
}

double time_ms(const std::function<void()>& fn, int reps) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        auto t0 = clock_type::now();
        fn();
        double ms = std::chrono::duration<double, std::milli>(clock_type::now() - t0).count();
        if (ms < best) best = ms;
    }
    return best;
}

int g_mismatches = 0;

void report(const std::string& name, const std::string& shape, double serial_ms,
            double parallel_ms, const std::vector<double>& ys, const std::vector<double>& yp) {
    bool identical = ys == yp;
    if (!identical) ++g_mismatches;
    std::printf("%-12s %-34s %9.3f %9.3f %7.2fx %s\n", name.c_str(), shape.c_str(), serial_ms,
                parallel_ms, serial_ms / parallel_ms, identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
    namespace k = wase::kernels;
    const int reps = 5;
    std::printf("%-12s %-34s %9s %9s %8s\n", "kernel", "shape", "serial", "openmp", "speedup");
    std::printf("%-12s %-34s %9s %9s %8s\n", "", "", "(ms)", "(ms)", "");

    {  // encoder-shaped strided conv: 1 x 20000 -> 64 x 2498
        const int c_in = 1, l_in = 20000, c_out = 64, kk = 20, stride = 8;
        const int l_out = (l_in - kk) / stride + 1;
        auto x = rand_vec(static_cast<size_t>(c_in) * l_in, 1);
        auto w = rand_vec(static_cast<size_t>(c_out) * c_in * kk, 2);
        std::vector<double> ys(static_cast<size_t>(c_out) * l_out), yp(ys.size());
        double ts = time_ms([&] { k::serial::conv1d_fwd(x.data(), c_in, l_in, w.data(), c_out,
                                                        kk, stride, nullptr, ys.data(), l_out); },
                            reps);
        double tp = time_ms([&] { k::conv1d_fwd(x.data(), c_in, l_in, w.data(), c_out, kk,
                                                stride, nullptr, yp.data(), l_out); },
                            reps);
        report("conv1d", "1x20000 * 64x1x20 /8", ts, tp, ys, yp);
    }
    {  // decoder-shaped transposed conv: 64 x 2498 -> 1 x 19996
        const int c_in = 64, l_in = 2498, c_out = 1, kk = 20, stride = 8;
        const int l_out = (l_in - 1) * stride + kk;
        auto x = rand_vec(static_cast<size_t>(c_in) * l_in, 3);
        auto w = rand_vec(static_cast<size_t>(c_in) * c_out * kk, 4);
        std::vector<double> ys(static_cast<size_t>(c_out) * l_out), yp(ys.size());
        double ts = time_ms([&] { k::serial::tconv1d_fwd(x.data(), c_in, l_in, w.data(), c_out,
                                                         kk, stride, ys.data(), l_out); },
                            reps);
        double tp = time_ms([&] { k::tconv1d_fwd(x.data(), c_in, l_in, w.data(), c_out, kk,
                                                 stride, yp.data(), l_out); },
                            reps);
        report("tconv1d", "64x2498 * 64x1x20 /8", ts, tp, ys, yp);
    }
    {  // conv weight gradient at the same encoder shape
        const int c_in = 1, l_in = 20000, c_out = 64, kk = 20, stride = 8;
        const int l_out = (l_in - kk) / stride + 1;
        auto gy = rand_vec(static_cast<size_t>(c_out) * l_out, 5);
        auto x = rand_vec(static_cast<size_t>(c_in) * l_in, 6);
        std::vector<double> ys(static_cast<size_t>(c_out) * c_in * kk), yp(ys.size());
        double ts = time_ms([&] { k::serial::convlike_dw(gy.data(), c_out, l_out, x.data(), c_in,
                                                         l_in, kk, stride, ys.data()); },
                            reps);
        double tp = time_ms([&] { k::convlike_dw(gy.data(), c_out, l_out, x.data(), c_in, l_in,
                                                 kk, stride, yp.data()); },
                            reps);
        report("convlike_dw", "gy 64x2498, x 1x20000, K20", ts, tp, ys, yp);
    }
    {  // TCN depthwise conv: 64 x 2498, K=3, dilation 4
        const int c = 64, l = 2498, kk = 3, dil = 4;
        auto x = rand_vec(static_cast<size_t>(c) * l, 7);
        auto w = rand_vec(static_cast<size_t>(c) * kk, 8);
        std::vector<double> ys(static_cast<size_t>(c) * l), yp(ys.size());
        double ts = time_ms(
            [&] { k::serial::dwconv_fwd(x.data(), c, l, w.data(), kk, dil, ys.data()); }, reps);
        double tp =
            time_ms([&] { k::dwconv_fwd(x.data(), c, l, w.data(), kk, dil, yp.data()); }, reps);
        report("dwconv", "64x2498, K3 dil4", ts, tp, ys, yp);
    }
    {  // pointwise/matmul: 64x64 * 64x2498
        const int m = 64, p = 64, n = 2498;
        auto a = rand_vec(static_cast<size_t>(m) * p, 9);
        auto b = rand_vec(static_cast<size_t>(p) * n, 10);
        std::vector<double> ys(static_cast<size_t>(m) * n), yp(ys.size());
        double ts =
            time_ms([&] { k::serial::matmul_nn(a.data(), m, p, b.data(), n, ys.data()); }, reps);
        double tp = time_ms([&] { k::matmul_nn(a.data(), m, p, b.data(), n, yp.data()); }, reps);
        report("matmul_nn", "64x64 * 64x2498", ts, tp, ys, yp);
    }
    {  // recurrent-step shape: 256x64 * 64x64 (paper-ish voiceprint gates)
        const int m = 256, p = 64, n = 64;
        auto a = rand_vec(static_cast<size_t>(m) * p, 11);
        auto b = rand_vec(static_cast<size_t>(p) * n, 12);
        std::vector<double> ys(static_cast<size_t>(m) * n), yp(ys.size());
        double ts =
            time_ms([&] { k::serial::matmul_nt(a.data(), m, p, b.data(), n, ys.data()); }, reps);
        double tp = time_ms([&] { k::matmul_nt(a.data(), m, p, b.data(), n, yp.data()); }, reps);
        report("matmul_nt", "256x64 * (64x64)^T", ts, tp, ys, yp);
    }

    if (g_mismatches) {
        std::printf("\n%d kernel(s) broke the bit-identical contract\n", g_mismatches);
        return 1;
    }
    return 0;
}
