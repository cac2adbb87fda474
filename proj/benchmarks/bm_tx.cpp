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

using namespace pgl;

namespace {

Features feature_arg(std::int64_t i) {
    switch (i) {
    case 0:
        return Features::Baseline;
    case 1:
        return Features::ML;
    case 2:
        return Features::MLP;
    default:
        return Features::MLPC;
    }
}

const char* feature_name(std::int64_t i) {
    switch (i) {
    case 0:
        return "baseline";
    case 1:
        return "ml";
    case 2:
        return "mlp";
    default:
        return "mlpc";
    }
}

struct BmPool {
    std::filesystem::path path;
    std::unique_ptr<Pool> pool;

    explicit BmPool(Features f) {
        path = std::filesystem::temp_directory_path() / "pgl_bm_tx.pool";
        std::filesystem::remove(path);
        layout::CreateParams p;
        p.pool_size = 256ull << 20;
        p.rows_per_zone = 16;
        p.chunk_size = 262144;
        PoolOptions opts;
        opts.features = f;
        pool = Pool::create(path.string(), p, opts);
    }
    ~BmPool() {
        pool.reset();
        std::filesystem::remove(path);
    }
};

// One transaction per iteration: allocate an object of the given size.
void BM_TxAlloc(benchmark::State& state) {
    BmPool bp(feature_arg(state.range(1)));
    std::uint64_t size = static_cast<std::uint64_t>(state.range(0));
    std::vector<ObjectRef> made;
    made.reserve(100000);
    for (auto _ : state) {
        TxScope tx(*bp.pool);
        made.push_back(pgl_tx_alloc(size, 1));
        tx.commit();
        if (made.size() >= 100000) { // recycle to stay inside the pool
            state.PauseTiming();
            for (ObjectRef r : made) {
                TxScope f(*bp.pool);
                pgl_tx_free(r);
                f.commit();
            }
            made.clear();
            state.ResumeTiming();
        }
    }
    state.SetLabel(feature_name(state.range(1)));
}
BENCHMARK(BM_TxAlloc)
    ->ArgsProduct({{64, 256, 1024, 4096}, {0, 1, 2, 3}})
    ->Unit(benchmark::kMicrosecond);

// One transaction per iteration: overwrite a whole object.
void BM_TxOverwrite(benchmark::State& state) {
    BmPool bp(feature_arg(state.range(1)));
    std::uint64_t size = static_cast<std::uint64_t>(state.range(0));
    ObjectRef r;
    {
        TxScope tx(*bp.pool);
        r = pgl_tx_alloc(size, 1);
        tx.commit();
    }
    std::uint8_t fill = 0;
    for (auto _ : state) {
        TxScope tx(*bp.pool);
        auto* p = pgl_tx_add_range(r, 0, size);
        std::memset(p, ++fill, size);
        tx.commit();
    }
    state.SetLabel(feature_name(state.range(1)));
    state.SetBytesProcessed(state.iterations() * size);
}
BENCHMARK(BM_TxOverwrite)
    ->ArgsProduct({{64, 256, 1024, 4096}, {0, 1, 2, 3}})
    ->Unit(benchmark::kMicrosecond);

// One transaction per iteration: free (paired with an untimed alloc).
void BM_TxFree(benchmark::State& state) {
    BmPool bp(feature_arg(state.range(1)));
    std::uint64_t size = static_cast<std::uint64_t>(state.range(0));
    for (auto _ : state) {
        state.PauseTiming();
        ObjectRef r;
        {
            TxScope tx(*bp.pool);
            r = pgl_tx_alloc(size, 1);
            tx.commit();
        }
        state.ResumeTiming();
        TxScope tx(*bp.pool);
        pgl_tx_free(r);
        tx.commit();
    }
    state.SetLabel(feature_name(state.range(1)));
}
BENCHMARK(BM_TxFree)
    ->ArgsProduct({{64, 1024}, {0, 3}})
    ->Unit(benchmark::kMicrosecond);

} // namespace
