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

#pragma once

#include "kv.hpp"

#include <string>

namespace pgl::bench {

struct WorkloadSpec {
    kv::Structure structure = kv::Structure::Ctree;
    std::uint64_t inserts = 0;
    std::uint64_t removes = 0;
    std::uint64_t lookups = 0;
    std::uint32_t threads = 1;
    std::uint64_t key_space = 1 << 20;
    std::uint64_t seed = 1;
    std::string mode = "mlpc";
};

/// Library operation modes: "baseline" (micro-buffering only), "ml"
/// (+ metadata/log replication), "mlp" (+ parity), "mlpc" (+ checksums,
/// the default), "scrub:N" (mlpc + scrubbing every N transactions), and
/// "conservative" (mlpc + verify on every access).
struct ModeConfig {
    Features features = Features::MLPC;
    DetectMode detect = DetectMode::Default;
    std::uint32_t scrub_interval = 100000;
    bool valid = true;
};
ModeConfig parse_mode(const std::string& mode);

struct BenchResult {
    std::uint64_t ops = 0;
    double seconds = 0;
    double ops_per_sec = 0;
    double p50_us = 0;
    double p90_us = 0;
    double p99_us = 0;
    std::uint64_t commits = 0;
    std::uint64_t bytes_logged = 0;
    std::uint64_t alloc_bytes = 0;
    std::uint64_t alloc_objects = 0;
    double alloc_bytes_per_insert = 0;
    double alloc_objects_per_insert = 0;
    std::uint64_t vulnerable_total = 0;
    double vulnerable_window_avg = 0; // bytes exposed between scrub passes
    std::uint64_t scrub_passes = 0;
};

/// Run the op mix over a pool (already opened with the mode's options).
/// Spawns spec.threads workers, each executing its share of operations as
/// individual transactions.
BenchResult run_workload(Pool& pool, const WorkloadSpec& spec);

} // namespace pgl::bench
