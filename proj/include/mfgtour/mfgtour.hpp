#ifndef MFGTOUR_MFGTOUR_HPP_INCLUDED
#define MFGTOUR_MFGTOUR_HPP_INCLUDED

// Core library. File formats live in mfgtour/io.hpp, which also needs nlohmann/json.

#include "mfgtour/abm.hpp"
#include "mfgtour/congestion.hpp"
#include "mfgtour/control.hpp"
#include "mfgtour/equilibrium.hpp"
#include "mfgtour/mass.hpp"
#include "mfgtour/network.hpp"
#include "mfgtour/transport.hpp"
#include "mfgtour/value.hpp"

#endif  // MFGTOUR_MFGTOUR_HPP_INCLUDED
