#pragma once

#include "ocdmlc/analysis.hpp"
#include "ocdmlc/checkpoint.hpp"
#include "ocdmlc/config.hpp"
#include "ocdmlc/data.hpp"
#include "ocdmlc/decoding.hpp"
#include "ocdmlc/grad_check.hpp"
#include "ocdmlc/graph.hpp"
#include "ocdmlc/metrics.hpp"
#include "ocdmlc/model.hpp"
#include "ocdmlc/ocd.hpp"
#include "ocdmlc/oracle.hpp"
#include "ocdmlc/params.hpp"
#include "ocdmlc/rng.hpp"
#include "ocdmlc/tensor.hpp"
#include "ocdmlc/training.hpp"
