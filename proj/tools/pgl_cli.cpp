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

#include "CLI11.hpp"
#include "json.hpp"

#include "workloads/bench.hpp"
#include "workloads/kv.hpp"

#include <cstdlib>
#include <iostream>
#include <random>

using json = nlohmann::json;
using namespace pgl;

namespace {

// Exit codes: 0 ok, 1 inconsistency found, 2 usage, 3 pool I/O, 4 corruption.
constexpr int kExitInconsistent = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitCorrupt = 4;

struct Cli {
    std::string pool_path;
    std::uint64_t size = 64ull << 20;
    std::uint32_t rows = 100;
    std::uint64_t chunk = 262144;
    std::uint32_t zones = 1;
    std::string mode = "mlpc";
    std::uint32_t scrub_interval = 0;
    std::uint64_t seed = 1;
    std::uint32_t threads = 1;
    std::string structure = "ctree";
    std::uint64_t inserts = 0, removes = 0, lookups = 0;
    std::uint64_t key_space = 1 << 20;
    std::string inject_kind; // media | scribble
    std::string target = "page";
    bool as_json = false;
};

PoolOptions options_from_mode(const bench::ModeConfig& mc) {
    PoolOptions o;
    o.features = mc.features;
    o.detect = mc.detect;
    o.scrub_interval = mc.scrub_interval;
    return o;
}

void emit(const Cli& c, const json& j, const std::string& human) {
    if (c.as_json)
        std::cout << j.dump(2) << "\n";
    else
        std::cout << human;
}

json geometry_json(Pool& pool) {
    const auto& g = pool.geometry();
    const auto& h = g.hdr;
    std::uint64_t parity_bytes = std::uint64_t{h.zone_count} * h.row_size;
    std::uint64_t cm_bytes = std::uint64_t{h.zone_count} * g.cm_chunks * h.chunk_size;
    std::uint64_t meta_bytes = h.zones_off - h.log_len - layout::kLogOff + 24576;
    std::uint64_t fixed_meta = 6 * kPageSize; // headers, zone metas, bad pages (x2)
    std::uint64_t data_capacity =
        std::uint64_t{h.zone_count} *
        (std::uint64_t{g.data_rows} * h.row_size - std::uint64_t{g.cm_chunks} * h.chunk_size);
    std::uint64_t overhead = h.pool_size - data_capacity;
    (void)meta_bytes;

    json j;
    j["pool_size"] = h.pool_size;
    j["uuid_lo"] = h.uuid_lo;
    j["zone_count"] = h.zone_count;
    j["rows_per_zone"] = h.rows_per_zone;
    j["chunk_size"] = h.chunk_size;
    j["row_size"] = h.row_size;
    j["zone_size"] = h.zone_size;
    j["log_bytes"] = h.log_len;
    j["slot_count"] = h.slot_count;
    j["metadata_bytes"] = fixed_meta;
    j["chunk_meta_bytes"] = cm_bytes;
    j["parity_bytes"] = parity_bytes;
    j["parity_bytes_per_zone"] = h.row_size;
    j["parity_fraction_of_zone"] = static_cast<double>(h.row_size) / h.zone_size;
    j["data_capacity"] = data_capacity;
    j["overhead_bytes"] = overhead;
    j["overhead_fraction"] = static_cast<double>(overhead) / h.pool_size;
    j["root_offset"] = h.root_offset;

    json zs = json::array();
    for (std::uint32_t z = 0; z < pool.zone_count(); ++z) {
        auto st = pool.zone(z).stats();
        zs.push_back({{"zone", z},
                      {"live_objects", st.live_objects},
                      {"live_bytes", st.live_bytes},
                      {"free_chunks", st.free_chunks},
                      {"run_chunks", st.run_chunks}});
    }
    j["zones"] = zs;
    return j;
}

int cmd_create(const Cli& c) {
    layout::CreateParams p;
    p.pool_size = c.size;
    p.rows_per_zone = c.rows;
    p.chunk_size = c.chunk;
    p.zone_count = c.zones;
    auto pool = Pool::create(c.pool_path, p);
    json j = geometry_json(*pool);
    j["zero_fill_ms"] = pool->create_zero_fill_ms();
    emit(c, j,
         "created pool " + c.pool_path + " (" + std::to_string(j["pool_size"].get<std::uint64_t>()) +
             " bytes, " + std::to_string(c.zones) + " zone(s), zero-fill " +
             std::to_string(pool->create_zero_fill_ms()) + " ms)\n");
    return 0;
}

int cmd_info(const Cli& c) {
    auto pool = Pool::open(c.pool_path);
    json j = geometry_json(*pool);
    std::string human;
    human += "pool:          " + c.pool_path + "\n";
    human += "size:          " + std::to_string(j["pool_size"].get<std::uint64_t>()) + " bytes\n";
    human += "zones:         " + std::to_string(j["zone_count"].get<std::uint32_t>()) + " x " +
             std::to_string(j["zone_size"].get<std::uint64_t>()) + " bytes\n";
    human += "rows/zone:     " + std::to_string(j["rows_per_zone"].get<std::uint32_t>()) +
             " (row " + std::to_string(j["row_size"].get<std::uint64_t>()) + " bytes)\n";
    human += "chunk:         " + std::to_string(j["chunk_size"].get<std::uint64_t>()) + " bytes\n";
    human += "parity/zone:   " + std::to_string(j["parity_bytes_per_zone"].get<std::uint64_t>()) +
             " bytes (" + std::to_string(100.0 * j["parity_fraction_of_zone"].get<double>()) +
             "% of zone)\n";
    human += "overhead:      " + std::to_string(j["overhead_bytes"].get<std::uint64_t>()) +
             " bytes (" + std::to_string(100.0 * j["overhead_fraction"].get<double>()) +
             "% of pool)\n";
    human += "root offset:   " + std::to_string(j["root_offset"].get<std::uint64_t>()) + "\n";
    for (auto& z : j["zones"])
        human += "zone " + std::to_string(z["zone"].get<std::uint32_t>()) + ":        " +
                 std::to_string(z["live_objects"].get<std::uint64_t>()) + " objects, " +
                 std::to_string(z["live_bytes"].get<std::uint64_t>()) + " live bytes\n";
    emit(c, j, human);
    return 0;
}

int cmd_check(const Cli& c) {
    auto pool = Pool::open(c.pool_path);
    auto rep = pool->recovery().check();
    json j{{"ok", rep.ok()},
           {"objects_scanned", rep.objects_scanned},
           {"checksum_failures", rep.checksum_failures},
           {"parity_bad_ranges", rep.parity_bad_ranges},
           {"metadata_failures", rep.metadata_failures}};
    emit(c, j,
         std::string(rep.ok() ? "OK" : "INCONSISTENT") + ": scanned " +
             std::to_string(rep.objects_scanned) + " objects, " +
             std::to_string(rep.checksum_failures) + " checksum failures, " +
             std::to_string(rep.parity_bad_ranges) + " bad parity ranges, " +
             std::to_string(rep.metadata_failures) + " metadata failures\n");
    return rep.ok() ? 0 : kExitInconsistent;
}

int cmd_scrub(const Cli& c) {
    auto pool = Pool::open(c.pool_path);
    auto rep = pool->recovery().scrub();
    json j{{"objects_scanned", rep.objects_scanned},
           {"mismatches", rep.mismatches},
           {"repaired", rep.repaired},
           {"unrecoverable", rep.unrecoverable},
           {"metadata_repaired", rep.metadata_repaired},
           {"parity_ranges_fixed", rep.parity_ranges_fixed}};
    emit(c, j,
         "scrub: " + std::to_string(rep.objects_scanned) + " objects scanned, " +
             std::to_string(rep.mismatches) + " mismatches, " + std::to_string(rep.repaired) +
             " repaired, " + std::to_string(rep.unrecoverable) + " unrecoverable\n");
    return rep.unrecoverable == 0 ? 0 : kExitInconsistent;
}

int cmd_inject(const Cli& c) {
    auto pool = Pool::open(c.pool_path);
    const auto& g = pool->geometry();
    std::mt19937_64 rng(c.seed);
    InjectReport rep;

    if (c.inject_kind == "media") {
        std::uint64_t page = 0;
        if (c.target == "metadata") {
            page = g.hdr.zone_meta_off;
        } else if (c.target == "object") {
            std::vector<std::uint64_t> pages;
            for (std::uint32_t z = 0; z < pool->zone_count(); ++z)
                pool->zone(z).for_each_live([&](const ObjectPlace& p) {
                    pages.push_back(p.obj_off & ~(kPageSize - 1));
                });
            if (pages.empty()) {
                std::cerr << "no live objects to target\n";
                return kExitUsage;
            }
            page = pages[rng() % pages.size()];
        } else {
            std::uint64_t zone_pages =
                std::uint64_t{pool->zone_count()} * g.hdr.zone_size / kPageSize;
            page = g.hdr.zones_off + (rng() % zone_pages) * kPageSize;
        }
        rep = pool->recovery().inject_media_page(page, /*protect_page=*/false);
    } else if (c.inject_kind == "scribble") {
        std::uint64_t off, len;
        if (c.target == "metadata") {
            std::uint32_t z = static_cast<std::uint32_t>(rng() % pool->zone_count());
            std::uint32_t chunk = static_cast<std::uint32_t>(rng() % g.chunk_count);
            off = g.cm_entry_off(z, chunk);
            len = sizeof(layout::ChunkMetaRec);
        } else if (c.target == "object") {
            std::vector<ObjectPlace> objs;
            for (std::uint32_t z = 0; z < pool->zone_count(); ++z)
                pool->zone(z).for_each_live(
                    [&](const ObjectPlace& p) { objs.push_back(p); });
            if (objs.empty()) {
                std::cerr << "no live objects to target\n";
                return kExitUsage;
            }
            const auto& p = objs[rng() % objs.size()];
            off = p.obj_off;
            len = 1 + rng() % (p.payload_cap + layout::kObjHeaderSize);
        } else {
            // random range within one row of a random zone
            std::uint32_t z = static_cast<std::uint32_t>(rng() % pool->zone_count());
            std::uint32_t row = static_cast<std::uint32_t>(rng() % g.hdr.rows_per_zone);
            std::uint64_t row_base = g.zone_off(z) + std::uint64_t{row} * g.hdr.row_size;
            len = 1 + rng() % 4096;
            off = row_base + rng() % (g.hdr.row_size - len);
        }
        rep = pool->recovery().inject_scribble(off, len, rng());
    } else {
        std::cerr << "inject requires --media or --scribble\n";
        return kExitUsage;
    }

    json j{{"kind", rep.kind},      {"offset", rep.offset},
           {"len", rep.len},        {"zone", rep.zone},
           {"parity_member", rep.parity_member}, {"page_protected", rep.page_protected}};
    emit(c, j,
         "injected " + rep.kind + " at offset " + std::to_string(rep.offset) + " (" +
             std::to_string(rep.len) + " bytes)\n");
    return 0;
}

int cmd_recover(const Cli& c) {
    // Opening replays redo logs and pending bad-page repairs; the scrub
    // pass then restores object and parity integrity from checksums.
    auto pool = Pool::open(c.pool_path);
    auto srep = pool->recovery().scrub();
    auto crep = pool->recovery().check();
    json j{{"scrub",
            {{"objects_scanned", srep.objects_scanned},
             {"mismatches", srep.mismatches},
             {"repaired", srep.repaired},
             {"unrecoverable", srep.unrecoverable},
             {"metadata_repaired", srep.metadata_repaired},
             {"parity_ranges_fixed", srep.parity_ranges_fixed}}},
           {"check_ok", crep.ok()},
           {"repair_us_last", pool->recovery().last_repair_us()}};
    emit(c, j,
         "recover: " + std::to_string(srep.repaired) + " objects repaired, " +
             std::to_string(srep.parity_ranges_fixed) + " parity ranges rebuilt, " +
             std::to_string(srep.unrecoverable) + " unrecoverable; check " +
             (crep.ok() ? "OK" : "INCONSISTENT") + "\n");
    return crep.ok() ? 0 : kExitInconsistent;
}

int cmd_bench(const Cli& c) {
    auto mc = bench::parse_mode(c.mode);
    if (!mc.valid) {
        std::cerr << "unknown mode: " << c.mode << "\n";
        return kExitUsage;
    }
    if (c.scrub_interval > 0) {
        mc.detect = DetectMode::Scrub;
        mc.scrub_interval = c.scrub_interval;
    }
    auto structure = kv::parse_structure(c.structure);
    if (!structure) {
        std::cerr << "unknown structure: " << c.structure << "\n";
        return kExitUsage;
    }
    auto pool = Pool::open(c.pool_path, options_from_mode(mc));

    bench::WorkloadSpec spec;
    spec.structure = *structure;
    spec.inserts = c.inserts;
    spec.removes = c.removes;
    spec.lookups = c.lookups;
    spec.threads = c.threads;
    spec.key_space = c.key_space;
    spec.seed = c.seed;
    spec.mode = c.mode;

    auto r = bench::run_workload(*pool, spec);
    json j{{"structure", c.structure},
           {"mode", c.mode},
           {"threads", c.threads},
           {"ops", r.ops},
           {"seconds", r.seconds},
           {"ops_per_sec", r.ops_per_sec},
           {"p50_us", r.p50_us},
           {"p90_us", r.p90_us},
           {"p99_us", r.p99_us},
           {"commits", r.commits},
           {"bytes_logged", r.bytes_logged},
           {"alloc_bytes", r.alloc_bytes},
           {"alloc_objects", r.alloc_objects},
           {"alloc_bytes_per_insert", r.alloc_bytes_per_insert},
           {"alloc_objects_per_insert", r.alloc_objects_per_insert},
           {"vulnerable_bytes_total", r.vulnerable_total},
           {"vulnerable_window_avg", r.vulnerable_window_avg},
           {"scrub_passes", r.scrub_passes}};
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "%s/%s: %llu ops in %.3fs (%.0f ops/s), p50 %.1fus p99 %.1fus\n",
                  c.structure.c_str(), c.mode.c_str(),
                  static_cast<unsigned long long>(r.ops), r.seconds, r.ops_per_sec,
                  r.p50_us, r.p99_us);
    std::string human(buf);
    if (spec.inserts) {
        std::snprintf(buf, sizeof(buf), "  alloc/insert: %.1f bytes (%.2f objects)\n",
                      r.alloc_bytes_per_insert, r.alloc_objects_per_insert);
        human += buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "  vulnerable bytes: total %llu, window avg %.0f (%llu scrub passes)\n",
                  static_cast<unsigned long long>(r.vulnerable_total),
                  r.vulnerable_window_avg,
                  static_cast<unsigned long long>(r.scrub_passes));
    human += buf;
    emit(c, j, human);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fault-tolerant persistent object pool tool"};
    app.require_subcommand(1);
    Cli c;

    auto add_pool = [&](CLI::App* sub) {
        sub->add_option("--pool", c.pool_path, "pool file path")->required();
        sub->add_flag("--json", c.as_json, "machine-readable report");
    };

    auto* create = app.add_subcommand("create", "create and zero-fill a pool");
    add_pool(create);
    create->add_option("--size", c.size, "pool size in bytes");
    create->add_option("--rows", c.rows, "chunk rows per zone (last is parity)");
    create->add_option("--chunk", c.chunk, "chunk size in bytes");
    create->add_option("--zones", c.zones, "zone count");

    auto* info = app.add_subcommand("info", "geometry and occupancy");
    add_pool(info);

    auto* check = app.add_subcommand("check", "verify checksums and parity; no repairs");
    add_pool(check);

    auto* scrub = app.add_subcommand("scrub", "verify and repair the whole pool");
    add_pool(scrub);

    auto* inject = app.add_subcommand("inject", "inject a media error or a scribble");
    add_pool(inject);
    bool media = false, scribble = false;
    inject->add_flag("--media", media, "emulated media error (page erase)");
    inject->add_flag("--scribble", scribble, "random overwrite");
    inject->add_option("--target", c.target, "page | object | metadata");
    inject->add_option("--seed", c.seed, "rng seed");

    auto* recover = app.add_subcommand("recover", "replay logs and repair corruption");
    add_pool(recover);

    auto* bench = app.add_subcommand("bench", "run a key-value workload");
    add_pool(bench);
    bench->add_option("--structure", c.structure, "list | ctree | skiplist | hashmap");
    bench->add_option("--inserts", c.inserts, "insert count");
    bench->add_option("--removes", c.removes, "remove count");
    bench->add_option("--lookups", c.lookups, "lookup count");
    bench->add_option("--threads", c.threads, "worker threads");
    bench->add_option("--mode", c.mode, "baseline|ml|mlp|mlpc|scrub:N|conservative");
    bench->add_option("--scrub-interval", c.scrub_interval, "transactions between scrubs");
    bench->add_option("--seed", c.seed, "rng seed");
    bench->add_option("--key-space", c.key_space, "distinct keys");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    if (const char* env = std::getenv("PGL_MODE"))
        c.mode = env; // environment wins over --mode

    try {
        if (create->parsed())
            return cmd_create(c);
        if (info->parsed())
            return cmd_info(c);
        if (check->parsed())
            return cmd_check(c);
        if (scrub->parsed())
            return cmd_scrub(c);
        if (inject->parsed()) {
            c.inject_kind = media ? "media" : (scribble ? "scribble" : "");
            return cmd_inject(c);
        }
        if (recover->parsed())
            return cmd_recover(c);
        if (bench->parsed())
            return cmd_bench(c);
    } catch (const io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const corruption_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCorrupt;
    } catch (const error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
