#pragma once

#include "cdm/dataset.hpp"
#include "cdm/estimation.hpp"
#include "cdm/identifiability.hpp"
#include "cdm/inference.hpp"
#include "cdm/io.hpp"
#include "cdm/models.hpp"
#include "cdm/simulation.hpp"
