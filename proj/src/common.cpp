#include "crispdepth/common.hpp"

#include <atomic>
#include <cstdio>
#include <sstream>

namespace crisp {

std::string Rng::state_string() const {
    std::ostringstream os;
    os << gen_ << " " << (has_cached_ ? 1 : 0) << " " << cached_;
    return os.str();
}

void Rng::restore_state(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
    int hc = 0;
    is >> hc >> cached_;
    has_cached_ = hc != 0;
    if (is.fail()) throw ConfigError("bad RNG state string");
}

uint64_t fnv1a(const void* data, size_t nbytes) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    uint64_t h = 1469598103934665603ull;
    for (size_t i = 0; i < nbytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

namespace {
std::atomic<uint64_t> g_warnings{0};
std::atomic<bool> g_silent{false};
}  // namespace

void warn(const std::string& msg) {
    ++g_warnings;
    if (!g_silent.load()) std::fprintf(stderr, "[warn] %s\n", msg.c_str());
}

uint64_t warning_count() { return g_warnings.load(); }

void set_warnings_silent(bool silent) { g_silent.store(silent); }

}  // namespace crisp
