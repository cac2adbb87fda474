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

#include "pgl/checksum.hpp"

#include "pgl/errors.hpp"

#include <cstring>

namespace pgl::adler {
namespace {

// Largest n with 255*n*(n+1)/2 + (n+1)*(kMod-1) < 2^32, the usual bound
// for deferring the modulo while summing into 32-bit accumulators.
constexpr std::size_t kNMax = 5552;

} // namespace

std::uint32_t extend(std::uint32_t sum, std::span<const std::byte> data) {
    std::uint32_t a = sum & 0xffff;
    std::uint32_t b = (sum >> 16) & 0xffff;
    const std::byte* p = data.data();
    std::size_t n = data.size();
    while (n > 0) {
        std::size_t batch = n < kNMax ? n : kNMax;
        n -= batch;
        while (batch-- > 0) {
            a += static_cast<std::uint32_t>(*p++);
            b += a;
        }
        a %= kMod;
        b %= kMod;
    }
    return (b << 16) | a;
}

std::uint32_t compute(std::span<const std::byte> data) {
    return extend(kEmpty, data);
}

std::uint32_t replace(std::uint32_t old_sum,
                      std::uint64_t total_len,
                      std::uint64_t range_off,
                      std::span<const std::byte> old_bytes,
                      std::span<const std::byte> new_bytes) {
    if (old_bytes.size() != new_bytes.size())
        throw usage_error("adler::replace: old/new length mismatch");
    if (range_off + old_bytes.size() > total_len)
        throw bounds_error("adler::replace: range outside buffer");

    std::uint64_t a = old_sum & 0xffff;
    std::uint64_t b = (old_sum >> 16) & 0xffff;
    for (std::size_t i = 0; i < old_bytes.size(); ++i) {
        std::uint32_t oldv = static_cast<std::uint32_t>(old_bytes[i]);
        std::uint32_t newv = static_cast<std::uint32_t>(new_bytes[i]);
        // d = new - old mod kMod, kept non-negative.
        std::uint64_t d = (newv + kMod - oldv) % kMod;
        std::uint64_t weight = (total_len - (range_off + i)) % kMod;
        a = (a + d) % kMod;
        b = (b + weight * d) % kMod;
    }
    return static_cast<std::uint32_t>((b << 16) | a);
}

} // namespace pgl::adler

namespace pgl {

std::uint32_t object_checksum(std::uint64_t size, std::uint32_t type_id,
                              std::span<const std::byte> payload) {
    std::byte head[12];
    std::memcpy(head, &size, 8);
    std::memcpy(head + 8, &type_id, 4);
    std::uint32_t s = adler::extend(adler::kEmpty, std::span<const std::byte>(head, 12));
    return adler::extend(s, payload);
}

std::uint32_t object_checksum_replace(std::uint32_t old_sum,
                                      std::uint64_t payload_len,
                                      std::uint64_t payload_off,
                                      std::span<const std::byte> old_bytes,
                                      std::span<const std::byte> new_bytes) {
    // Header fields (size + type_id) occupy stream positions [0, 12).
    return adler::replace(old_sum, payload_len + 12, payload_off + 12,
                          old_bytes, new_bytes);
}

std::uint32_t struct_checksum(std::span<const std::byte> bytes,
                              std::size_t checksum_field_off) {
    if (checksum_field_off + 4 > bytes.size())
        throw usage_error("struct_checksum: field outside struct");
    std::uint32_t s = adler::extend(adler::kEmpty, bytes.subspan(0, checksum_field_off));
    return adler::extend(s, bytes.subspan(checksum_field_off + 4));
}

} // namespace pgl
