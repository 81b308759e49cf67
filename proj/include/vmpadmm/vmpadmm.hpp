#pragma once

#include "vmpadmm/common.hpp"
#include "vmpadmm/hpe.hpp"
#include "vmpadmm/linalg.hpp"
#include "vmpadmm/problems.hpp"
#include "vmpadmm/schedule.hpp"
#include "vmpadmm/solver.hpp"
