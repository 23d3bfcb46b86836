#pragma once

#include "sml/csv.hpp"
#include "sml/estimation.hpp"
#include "sml/experiments.hpp"
#include "sml/filters.hpp"
#include "sml/gaussian_moments.hpp"
#include "sml/models.hpp"
#include "sml/rng.hpp"
#include "sml/tensor.hpp"
