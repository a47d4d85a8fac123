#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace deforest {

// All module errors derive from this; messages carry enough context
// (file, line number, offending key/value) to act on without a debugger.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
inline void cat_into(std::ostringstream&) {}
template <class T, class... Ts>
void cat_into(std::ostringstream& os, T&& head, Ts&&... tail) {
    os << head;
    cat_into(os, std::forward<Ts>(tail)...);
}
} // namespace detail

template <class... Ts>
std::string cat(Ts&&... parts) {
    std::ostringstream os;
    detail::cat_into(os, std::forward<Ts>(parts)...);
    return os.str();
}

template <class... Ts>
[[noreturn]] void fail(Ts&&... parts) {
    throw Error(cat(std::forward<Ts>(parts)...));
}

} // namespace deforest
