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

#include <cstddef>
#include <cstdint>
#include <span>

namespace pgl::adler {

inline constexpr std::uint32_t kMod = 65521;
inline constexpr std::uint32_t kEmpty = 1; // a=1, b=0

/// Adler32 over a byte buffer. Value is b*2^16 + a with residues mod 65521.
std::uint32_t compute(std::span<const std::byte> data);

/// Continue an Adler32 over additional bytes (stream concatenation).
std::uint32_t extend(std::uint32_t sum, std::span<const std::byte> data);

/// Checksum of a buffer after replacing bytes at [range_off, range_off +
/// old_bytes.size()) with new_bytes, computed from the old checksum alone.
///
/// For a byte at stream position i changing by d = new - old:
///   a += d,  b += (total_len - i) * d   (both mod 65521)
/// so the cost is proportional to the replaced range, not the buffer.
std::uint32_t replace(std::uint32_t old_sum,
                      std::uint64_t total_len,
                      std::uint64_t range_off,
                      std::span<const std::byte> old_bytes,
                      std::span<const std::byte> new_bytes);

} // namespace pgl::adler

namespace pgl {

/// Checksum of a persistent object: Adler32 over the stream
///   [size (8 bytes LE)] [type_id (4 bytes LE)] [payload bytes]
/// The header's checksum field itself is excluded (absent from the stream,
/// not zeroed), so it never contributes to its own value.
std::uint32_t object_checksum(std::uint64_t size, std::uint32_t type_id,
                              std::span<const std::byte> payload);

/// Incremental form of object_checksum for a payload-range replacement.
/// payload_off is relative to the payload; the header fields ahead of the
/// payload shift every stream position by 12 bytes.
std::uint32_t object_checksum_replace(std::uint32_t old_sum,
                                      std::uint64_t payload_len,
                                      std::uint64_t payload_off,
                                      std::span<const std::byte> old_bytes,
                                      std::span<const std::byte> new_bytes);

/// Checksum of an on-media struct whose checksum field is excluded from its
/// own coverage: Adler32 over bytes[0, field_off) ++ bytes[field_off+4, end).
std::uint32_t struct_checksum(std::span<const std::byte> bytes,
                              std::size_t checksum_field_off);

} // namespace pgl
