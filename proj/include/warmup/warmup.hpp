#pragma once

#include "harness/config.hpp"
#include "harness/csv.hpp"
#include "harness/dataset.hpp"
#include "harness/sweep.hpp"
#include "harness/training.hpp"
#include "instability.hpp"
#include "model.hpp"
#include "numerics.hpp"
#include "optim.hpp"
#include "probe.hpp"
#include "schedule.hpp"
