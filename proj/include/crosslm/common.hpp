#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace crosslm {

namespace detail {
inline void str_append(std::ostringstream&) {}
template <class T, class... Rest>
void str_append(std::ostringstream& os, const T& v, const Rest&... rest) {
    os << v;
    str_append(os, rest...);
}
}  // namespace detail

// Builds an error/report message from heterogeneous pieces.
template <class... Args>
std::string str(const Args&... args) {
    std::ostringstream os;
    detail::str_append(os, args...);
    return os.str();
}

template <class... Args>
[[noreturn]] void fail(const Args&... args) {
    throw std::runtime_error(str(args...));
}

}  // namespace crosslm

#define CLX_CHECK(cond, ...)                   \
    do {                                       \
        if (!(cond)) ::crosslm::fail(__VA_ARGS__); \
    } while (0)
