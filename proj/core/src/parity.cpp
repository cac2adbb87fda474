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

#include "pgl/parity.hpp"

#include "pgl/errors.hpp"

#include <algorithm>
#include <cstring>

namespace pgl {

std::vector<std::byte> delta_compute(std::span<const std::byte> old_bytes,
                                     std::span<const std::byte> new_bytes) {
    if (old_bytes.size() != new_bytes.size())
        throw usage_error("delta_compute: length mismatch");
    std::vector<std::byte> d(old_bytes.size());
    for (std::size_t i = 0; i < d.size(); ++i)
        d[i] = old_bytes[i] ^ new_bytes[i];
    return d;
}

ParityEngine::ParityEngine(PersistentStore& store, ParityGeometry geom,
                           std::uint64_t atomic_threshold)
    : store_(store), geom_(geom), threshold_(atomic_threshold),
      locks_(geom.lock_count()) {}

void ParityEngine::apply_data_delta(std::uint64_t data_off,
                                    std::span<const std::byte> delta) {
    // Split at row boundaries; segments folding onto the same columns stack
    // by XOR, so an object spanning several rows needs no special casing.
    std::uint64_t off = data_off;
    std::size_t taken = 0;
    while (taken < delta.size()) {
        std::uint64_t col = geom_.column_of(off);
        std::uint64_t in_row = geom_.row_size - col;
        std::uint64_t n = std::min<std::uint64_t>(in_row, delta.size() - taken);
        apply(col, delta.subspan(taken, n));
        off += n;
        taken += n;
    }
}

void ParityEngine::apply(std::uint64_t column_off, std::span<const std::byte> delta) {
    if (delta.empty())
        return;
    if (column_off + delta.size() > geom_.row_size)
        throw bounds_error("parity apply outside the data-column range");
    bool exclusive = delta.size() >= threshold_;

    // Serialize per granule, in ascending offset order.
    std::uint64_t off = column_off;
    std::size_t taken = 0;
    while (taken < delta.size()) {
        std::uint64_t granule_end = (off / geom_.lock_granule + 1) * geom_.lock_granule;
        std::uint64_t n = std::min<std::uint64_t>(granule_end - off, delta.size() - taken);
        auto& lk = locks_[off / geom_.lock_granule];
        if (exclusive) {
            std::unique_lock g(lk);
            apply_segment(off, delta.subspan(taken, n), true);
        } else {
            std::shared_lock g(lk);
            apply_segment(off, delta.subspan(taken, n), false);
        }
        off += n;
        taken += n;
    }
    store_.persist(geom_.parity_base() + column_off, delta.size());
}

void ParityEngine::apply_segment(std::uint64_t column_off,
                                 std::span<const std::byte> delta, bool exclusive) {
    std::uint64_t abs = geom_.parity_base() + column_off;
    if (exclusive) {
        store_.xor_bytes(abs, delta);
        return;
    }
    // Shared holders may only issue word-sized atomic XORs. Unaligned edges
    // are masked into the containing word with zero lanes elsewhere.
    std::uint64_t pos = 0;
    std::uint64_t n = delta.size();
    while (pos < n) {
        std::uint64_t word_base = (abs + pos) & ~std::uint64_t{7};
        unsigned lane = static_cast<unsigned>((abs + pos) - word_base);
        unsigned take = static_cast<unsigned>(std::min<std::uint64_t>(8 - lane, n - pos));
        std::uint64_t w = 0;
        std::memcpy(reinterpret_cast<std::byte*>(&w) + lane, delta.data() + pos, take);
        store_.xor_word_atomic(word_base, w);
        pos += take;
    }
}

namespace {

// XOR src into acc, substituting zeros where [src_off, +len) overlaps an
// excluded pool range (zeros contribute nothing, so those bytes are skipped).
void xor_with_exclusions(std::vector<std::byte>& acc, const std::byte* src,
                         std::uint64_t src_off, std::uint64_t len,
                         std::span<const Range> excluded) {
    std::vector<Range> holes;
    for (const Range& e : excluded) {
        Range window{src_off, len};
        if (window.overlaps(e)) {
            std::uint64_t s = std::max(e.off, src_off);
            std::uint64_t t = std::min(e.end(), src_off + len);
            holes.push_back({s - src_off, t - s});
        }
    }
    std::sort(holes.begin(), holes.end(),
              [](const Range& a, const Range& b) { return a.off < b.off; });
    std::uint64_t pos = 0;
    auto xor_run = [&](std::uint64_t from, std::uint64_t to) {
        for (std::uint64_t i = from; i < to; ++i)
            acc[i] ^= src[i];
    };
    for (const Range& h : holes) {
        if (h.off > pos)
            xor_run(pos, h.off);
        pos = std::max(pos, h.end());
    }
    if (pos < len)
        xor_run(pos, len);
}

} // namespace

void ParityEngine::xor_column_window(std::vector<std::byte>& acc, std::uint32_t row,
                                     std::uint64_t column_off,
                                     std::span<const Range> excluded,
                                     std::uint64_t skip_member_off) const {
    std::uint64_t src_off = geom_.member_off(row, column_off);
    if (src_off == skip_member_off)
        return;
    const std::byte* src = store_.read_ptr(src_off, acc.size());
    xor_with_exclusions(acc, src, src_off, acc.size(), excluded);
}

void ParityEngine::recompute(std::uint64_t column_off, std::uint64_t len,
                             std::span<const Range> excluded) {
    if (column_off + len > geom_.row_size)
        throw bounds_error("parity recompute outside the column range");
    constexpr std::uint64_t kWindow = 1 << 16;
    std::uint64_t done = 0;
    while (done < len) {
        std::uint64_t n = std::min(kWindow, len - done);
        std::vector<std::byte> acc(n, std::byte{0});
        for (std::uint32_t r = 0; r < geom_.data_rows; ++r)
            xor_column_window(acc, r, column_off + done, excluded, ~std::uint64_t{0});
        std::uint64_t dst = geom_.parity_base() + column_off + done;
        store_.write(dst, acc);
        store_.persist(dst, n);
        done += n;
    }
}

void ParityEngine::reconstruct_member(std::uint64_t member_off, std::uint64_t len,
                                      std::span<const Range> excluded) {
    std::uint64_t col = geom_.column_of(member_off);
    if (col + len > geom_.row_size)
        throw bounds_error("reconstruct target crosses a row boundary");
    std::vector<std::byte> acc(len, std::byte{0});
    for (std::uint32_t r = 0; r <= geom_.data_rows; ++r) // includes parity row
        xor_column_window(acc, r, col, excluded, member_off);
    store_.write(member_off, acc);
    store_.persist(member_off, len);
}

std::vector<Range> ParityEngine::check(std::span<const Range> excluded) const {
    std::vector<Range> bad;
    constexpr std::uint64_t kWindow = 1 << 16;
    std::uint64_t col = 0;
    while (col < geom_.row_size) {
        std::uint64_t n = std::min(kWindow, geom_.row_size - col);
        std::vector<std::byte> acc(n, std::byte{0});
        for (std::uint32_t r = 0; r <= geom_.data_rows; ++r)
            xor_column_window(acc, r, col, excluded, ~std::uint64_t{0});
        std::uint64_t i = 0;
        while (i < n) {
            if (acc[i] == std::byte{0}) {
                ++i;
                continue;
            }
            std::uint64_t j = i;
            while (j < n && acc[j] != std::byte{0})
                ++j;
            range_set_insert(bad, Range{col + i, j - i});
            i = j;
        }
        col += n;
    }
    return bad;
}

} // namespace pgl
