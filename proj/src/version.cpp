#include "hsinas/version.hpp"

namespace hsinas {

const char* version() { return "0.1.0"; }

}  // namespace hsinas
