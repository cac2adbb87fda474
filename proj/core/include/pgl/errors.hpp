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

#include <stdexcept>
#include <string>

namespace pgl {

/// Base class for all library errors.
class error : public std::runtime_error {
public:
    explicit error(const std::string& what) : std::runtime_error(what) {}
};

/// File or mapping failure.
class io_error : public error {
public:
    using error::error;
};

/// Bad sizes, misaligned offsets, or a pool too small for its geometry.
class layout_error : public error {
public:
    using error::error;
};

/// Offset or range outside the pool, a parity row, or a metadata region.
class bounds_error : public error {
public:
    using error::error;
};

/// Transaction begin refused because the pool is frozen (fail policy only).
class frozen_error : public error {
public:
    using error::error;
};

/// Allocator cannot satisfy the request.
class space_error : public error {
public:
    using error::error;
};

/// Data corruption that could not be repaired from parity or replicas.
class corruption_error : public error {
public:
    using error::error;
};

/// A micro-buffer canary was overwritten; the transaction was aborted.
class canary_error : public error {
public:
    using error::error;
};

/// Concurrent faults or a fault inside the detector's own commit. The
/// process is expected to terminate and rely on post-crash recovery.
class fatal_fault : public error {
public:
    using error::error;
};

/// API misuse: wrong backend, call outside a transaction, double free, ...
class usage_error : public error {
public:
    using error::error;
};

/// Transaction aborted (by user request or error propagation).
class tx_aborted : public error {
public:
    using error::error;
};

/// Thrown by the simulated store when an armed crash point fires.
/// Deliberately not derived from pgl::error so library-internal error
/// handling never swallows it; only crash-test harnesses catch it.
struct crash_signal {
    std::uint64_t op_index;
};

} // namespace pgl
