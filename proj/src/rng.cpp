#include "uadct/rng.hpp"

#include <sstream>

#include "uadct/error.hpp"

namespace uadct {

std::string Rng::state() const {
    std::ostringstream out;
    out << engine_;
    return out.str();
}

void Rng::set_state(const std::string& text) {
    std::istringstream in(text);
    in >> engine_;
    if (in.fail()) {
        throw ConfigError("malformed random engine state");
    }
}

}  // namespace uadct
