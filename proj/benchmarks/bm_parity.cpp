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

#include "pgl/pgl.hpp"

#include <filesystem>
#include <random>
#include <vector>

using namespace pgl;

namespace {

struct MappedZone {
    std::filesystem::path path;
    std::unique_ptr<PersistentStore> store;
    std::unique_ptr<ParityEngine> engine;
    std::uint64_t row = 4 << 20;
    std::uint32_t data_rows = 15;

    MappedZone() {
        path = std::filesystem::temp_directory_path() / "pgl_bm_parity.pool";
        store = map_pool(path.string(), row * (data_rows + 1), true);
        engine = std::make_unique<ParityEngine>(
            *store, ParityGeometry{0, row, data_rows, 8192}, 8192);
    }
    ~MappedZone() {
        store.reset();
        std::filesystem::remove(path);
    }
};

std::vector<std::byte> rand_delta(std::size_t n) {
    std::mt19937_64 rng(n * 31);
    std::vector<std::byte> v(n);
    for (auto& b : v)
        b = static_cast<std::byte>(rng());
    return v;
}

// Below the threshold: shared range locks + word-sized atomic XOR.
void BM_ParityApplyAtomic(benchmark::State& state) {
    MappedZone z;
    auto delta = rand_delta(static_cast<std::size_t>(state.range(0)));
    std::uint64_t col = 0;
    for (auto _ : state) {
        z.engine->apply(col, delta);
        col = (col + 8192) % (z.row - delta.size());
    }
    state.SetBytesProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ParityApplyAtomic)->RangeMultiplier(4)->Range(64, 4096);

// Above the threshold: exclusive range locks + plain wide XOR.
void BM_ParityApplyVector(benchmark::State& state) {
    MappedZone z;
    auto delta = rand_delta(static_cast<std::size_t>(state.range(0)));
    std::uint64_t col = 0;
    for (auto _ : state) {
        z.engine->apply(col, delta);
        col = (col + 16384) % (z.row - delta.size());
    }
    state.SetBytesProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ParityApplyVector)->RangeMultiplier(4)->Range(16384, 1 << 20);

// Page repair latency: rebuild one 4 KiB page-column member.
void BM_PageReconstruct(benchmark::State& state) {
    MappedZone z;
    std::mt19937_64 rng(1);
    for (std::uint32_t r = 0; r < z.data_rows; ++r) {
        auto bytes = rand_delta(1 << 16);
        z.store->write(std::uint64_t{r} * z.row, bytes);
    }
    z.engine->recompute(0, z.row, {});
    for (auto _ : state) {
        std::uint64_t page = (rng() % z.data_rows) * z.row + 4096;
        z.engine->reconstruct_member(page, 4096, {});
    }
    state.SetBytesProcessed(state.iterations() * 4096);
}
BENCHMARK(BM_PageReconstruct);

} // namespace
