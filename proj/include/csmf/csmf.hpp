#pragma once

#include "bounds.hpp"
#include "dynamics.hpp"
#include "ensemble.hpp"
#include "errors.hpp"
#include "harness.hpp"
#include "io.hpp"
#include "kernels.hpp"
#include "meanfield.hpp"
#include "support.hpp"
#include "transport.hpp"
#include "util.hpp"
