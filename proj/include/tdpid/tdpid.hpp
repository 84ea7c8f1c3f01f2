#pragma once

#include "tdpid/model.hpp"
#include "tdpid/spectrum.hpp"
#include "tdpid/scalar_scan.hpp"
#include "tdpid/sensitivity.hpp"
#include "tdpid/optimize.hpp"
#include "tdpid/analysis.hpp"
#include "tdpid/json_io.hpp"
