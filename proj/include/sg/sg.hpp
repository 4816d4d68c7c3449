#pragma once

// Umbrella header for the whole toolkit.

#include "sg/backends.hpp"
#include "sg/candidates.hpp"
#include "sg/dataset.hpp"
#include "sg/golden.hpp"
#include "sg/harness.hpp"
#include "sg/metrics.hpp"
#include "sg/report.hpp"
#include "sg/results.hpp"
#include "sg/runner.hpp"
#include "sg/stp.hpp"
#include "sg/thesaurus.hpp"
