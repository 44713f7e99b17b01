#pragma once

#include "tvae/diff/grad_check.hpp"
#include "tvae/diff/ops.hpp"
#include "tvae/diff/tape.hpp"
