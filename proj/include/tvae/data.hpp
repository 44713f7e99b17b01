#pragma once

#include "tvae/data/csv.hpp"
#include "tvae/data/dataset.hpp"
#include "tvae/data/generator.hpp"
#include "tvae/data/split.hpp"
