#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

namespace csmf {

using json = nlohmann::json;

// 64-bit FNV-1a, used for provenance digests of descriptors and configs.
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// nlohmann::json objects iterate in sorted key order, so dump() is canonical.
inline std::string digest(const json& j) { return hex64(fnv1a64(j.dump())); }

// Runs fn(task) for task in [0, count) on up to `workers` threads. Tasks are
// handed out in contiguous blocks; fn must write only to task-owned output.
// If tasks throw, the exception of the lowest failing task is rethrown.
template <class Fn>
void parallel_for(std::size_t count, unsigned workers, Fn&& fn) {
    workers = std::max(1u, workers);
    if (workers == 1 || count < 2) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    const std::size_t nthreads = std::min<std::size_t>(workers, count);
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(nthreads);
    pool.reserve(nthreads);
    for (std::size_t w = 0; w < nthreads; ++w) {
        const std::size_t lo = count * w / nthreads;
        const std::size_t hi = count * (w + 1) / nthreads;
        pool.emplace_back([lo, hi, w, &fn, &errors] {
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace csmf
