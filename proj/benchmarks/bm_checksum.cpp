/*
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <benchmark/benchmark.h>

#include "pgl/checksum.hpp"

#include <random>
#include <vector>

namespace {

std::vector<std::byte> make_buf(std::size_t n) {
    std::mt19937_64 rng(n);
    std::vector<std::byte> v(n);
    for (auto& b : v)
        b = static_cast<std::byte>(rng());
    return v;
}

// Full recompute after a 64-byte modification, as a CRC-style checksum
// would require.
void BM_FullRecompute(benchmark::State& state) {
    auto buf = make_buf(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) {
        buf[17] ^= std::byte{1};
        benchmark::DoNotOptimize(pgl::adler::compute(buf));
    }
    state.SetBytesProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FullRecompute)->Range(4096, 8 << 20);

// Incremental update: cost proportional to the modified range.
void BM_IncrementalReplace(benchmark::State& state) {
    std::size_t n = static_cast<std::size_t>(state.range(0));
    auto buf = make_buf(n);
    auto old_piece = make_buf(64);
    auto new_piece = make_buf(64);
    std::uint32_t sum = pgl::adler::compute(buf);
    for (auto _ : state) {
        sum = pgl::adler::replace(sum, n, n / 2, old_piece, new_piece);
        benchmark::DoNotOptimize(sum);
        std::swap(old_piece, new_piece);
    }
    state.SetBytesProcessed(state.iterations() * 64);
}
BENCHMARK(BM_IncrementalReplace)->Range(4096, 8 << 20);

} // namespace
