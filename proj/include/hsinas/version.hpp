#pragma once

namespace hsinas {

const char* version();

}  // namespace hsinas
