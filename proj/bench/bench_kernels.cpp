// Serial reference vs OpenMP kernels. Set OMP_NUM_THREADS to vary the pool.

#include "bend/kernels.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

using namespace bend;

namespace {

void fill(std::span<double> v, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 0.1);
    for (double& x : v) x = n(rng);
}

struct ConvCase {
    Tensor4 in;
    std::vector<double> weight, bias;
    kernels::ConvWeights w;

    ConvCase(std::size_t batch, std::size_t channels, std::size_t side)
        : in(batch, channels, side, side), weight(channels * channels * 9), bias(channels) {
        fill(in.values(), 1);
        fill(weight, 2);
        fill(bias, 3);
        w = {weight, bias, channels, channels};
    }
};

template <bool Parallel>
void conv_forward(benchmark::State& state) {
    ConvCase c(4, static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
    Tensor4 out;
    for (auto _ : state) {
        if constexpr (Parallel)
            kernels::conv3x3_forward(c.in, c.w, out);
        else
            kernels::serial::conv3x3_forward(c.in, c.w, out);
        benchmark::DoNotOptimize(out.data());
    }
    state.counters["threads"] = Parallel ? kernels::thread_count() : 1;
}

template <bool Parallel>
void conv_backward(benchmark::State& state) {
    ConvCase c(4, static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
    Tensor4 d_out(c.in.batch(), c.in.channels(), c.in.height(), c.in.width()), d_in;
    fill(d_out.values(), 4);
    std::vector<double> dw(c.weight.size()), db(c.bias.size());
    const kernels::ConvGradients grads{dw, db};
    for (auto _ : state) {
        if constexpr (Parallel)
            kernels::conv3x3_backward(c.in, c.w, d_out, &d_in, &grads);
        else
            kernels::serial::conv3x3_backward(c.in, c.w, d_out, &d_in, &grads);
        benchmark::DoNotOptimize(d_in.data());
    }
}

void shapes(benchmark::internal::Benchmark* b) {
    b->Args({16, 16})->Args({64, 16})->Args({64, 32})->Unit(benchmark::kMillisecond);
}

}  // namespace

BENCHMARK(conv_forward<false>)->Name("conv3x3_forward/serial")->Apply(shapes);
BENCHMARK(conv_forward<true>)->Name("conv3x3_forward/parallel")->Apply(shapes);
BENCHMARK(conv_backward<false>)->Name("conv3x3_backward/serial")->Apply(shapes);
BENCHMARK(conv_backward<true>)->Name("conv3x3_backward/parallel")->Apply(shapes);

BENCHMARK_MAIN();
