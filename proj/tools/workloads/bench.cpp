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

#include "bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <random>
#include <thread>

namespace pgl::bench {

ModeConfig parse_mode(const std::string& mode) {
    ModeConfig c;
    if (mode == "baseline") {
        c.features = Features::Baseline;
    } else if (mode == "ml") {
        c.features = Features::ML;
    } else if (mode == "mlp") {
        c.features = Features::MLP;
    } else if (mode == "mlpc" || mode.empty()) {
        c.features = Features::MLPC;
    } else if (mode == "conservative") {
        c.features = Features::MLPC;
        c.detect = DetectMode::Conservative;
    } else if (mode.rfind("scrub:", 0) == 0) {
        c.features = Features::MLPC;
        c.detect = DetectMode::Scrub;
        try {
            c.scrub_interval = static_cast<std::uint32_t>(std::stoul(mode.substr(6)));
        } catch (...) {
            c.valid = false;
        }
        if (c.scrub_interval == 0)
            c.valid = false;
    } else {
        c.valid = false;
    }
    return c;
}

BenchResult run_workload(Pool& pool, const WorkloadSpec& spec) {
    kv::Store store(pool);
    BenchResult res;

    std::uint64_t commits0 = pool.counters().commits;
    std::uint64_t logged0 = pool.counters().bytes_logged;
    std::uint64_t ab0 = pool.counters().bytes_allocated;
    std::uint64_t ao0 = pool.counters().objects_allocated;
    pool.counters().vulnerable_total = 0;
    pool.counters().vulnerable_window = 0;

    // Scrub daemon: one pass every scrub_interval committed transactions,
    // recording the bytes left unverified in each window.
    std::atomic<bool> stop{false};
    std::vector<std::uint64_t> windows;
    std::thread scrubber;
    std::atomic<std::uint64_t> scrub_passes{0};
    if (pool.options().detect == DetectMode::Scrub) {
        scrubber = std::thread([&] {
            std::uint64_t last = pool.counters().commits.load();
            while (!stop.load(std::memory_order_relaxed)) {
                std::uint64_t now = pool.counters().commits.load();
                if (now - last >= pool.options().scrub_interval) {
                    last = now;
                    pool.recovery().scrub();
                    windows.push_back(pool.counters().vulnerable_window.exchange(0));
                    scrub_passes++;
                } else {
                    std::this_thread::sleep_for(std::chrono::microseconds(200));
                }
            }
        });
    }

    struct Share {
        std::uint64_t inserts, removes, lookups;
    };
    auto share_of = [&](std::uint64_t total, std::uint32_t t) {
        return total / spec.threads + (t < total % spec.threads ? 1 : 0);
    };

    std::vector<std::vector<double>> lat(spec.threads);
    auto t0 = std::chrono::steady_clock::now();
    std::vector<std::thread> workers;
    for (std::uint32_t t = 0; t < spec.threads; ++t) {
        workers.emplace_back([&, t] {
            std::mt19937_64 rng(spec.seed * 7919 + t);
            Share left{share_of(spec.inserts, t), share_of(spec.removes, t),
                       share_of(spec.lookups, t)};
            std::uint64_t n = 0;
            while (left.inserts + left.removes + left.lookups > 0) {
                std::uint64_t pick = rng() % (left.inserts + left.removes + left.lookups);
                std::uint64_t key = rng() % spec.key_space;
                bool sample = (n++ % 16) == 0;
                auto s0 = sample ? std::chrono::steady_clock::now()
                                 : std::chrono::steady_clock::time_point{};
                if (pick < left.inserts) {
                    store.insert(spec.structure, key, key ^ 0xC0FFEE);
                    left.inserts--;
                } else if (pick < left.inserts + left.removes) {
                    store.remove(spec.structure, key);
                    left.removes--;
                } else {
                    volatile auto v = store.lookup(spec.structure, key);
                    (void)v;
                    left.lookups--;
                }
                if (sample) {
                    auto dt = std::chrono::steady_clock::now() - s0;
                    lat[t].push_back(
                        std::chrono::duration<double, std::micro>(dt).count());
                }
            }
        });
    }
    for (auto& w : workers)
        w.join();
    auto t1 = std::chrono::steady_clock::now();

    if (scrubber.joinable()) {
        stop = true;
        scrubber.join();
    }

    res.ops = spec.inserts + spec.removes + spec.lookups;
    res.seconds = std::chrono::duration<double>(t1 - t0).count();
    res.ops_per_sec = res.seconds > 0 ? res.ops / res.seconds : 0;

    std::vector<double> all;
    for (auto& v : lat)
        all.insert(all.end(), v.begin(), v.end());
    std::sort(all.begin(), all.end());
    auto pct = [&](double p) {
        if (all.empty())
            return 0.0;
        std::size_t i = static_cast<std::size_t>(p * (all.size() - 1));
        return all[i];
    };
    res.p50_us = pct(0.50);
    res.p90_us = pct(0.90);
    res.p99_us = pct(0.99);

    res.commits = pool.counters().commits - commits0;
    res.bytes_logged = pool.counters().bytes_logged - logged0;
    res.alloc_bytes = pool.counters().bytes_allocated - ab0;
    res.alloc_objects = pool.counters().objects_allocated - ao0;
    if (spec.inserts) {
        res.alloc_bytes_per_insert = static_cast<double>(res.alloc_bytes) / spec.inserts;
        res.alloc_objects_per_insert =
            static_cast<double>(res.alloc_objects) / spec.inserts;
    }
    res.vulnerable_total = pool.counters().vulnerable_total;
    res.scrub_passes = scrub_passes;
    if (!windows.empty()) {
        std::uint64_t sum = 0;
        for (auto w : windows)
            sum += w;
        res.vulnerable_window_avg = static_cast<double>(sum) / windows.size();
    } else {
        res.vulnerable_window_avg = static_cast<double>(res.vulnerable_total);
    }
    return res;
}

} // namespace pgl::bench
