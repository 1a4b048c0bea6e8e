#pragma once

#include "evovgm/cli.hpp"
#include "evovgm/distributions.hpp"
#include "evovgm/elbo.hpp"
#include "evovgm/encoders.hpp"
#include "evovgm/grad_engine.hpp"
#include "evovgm/metrics.hpp"
#include "evovgm/random.hpp"
#include "evovgm/seq_io.hpp"
#include "evovgm/simulator.hpp"
#include "evovgm/special_functions.hpp"
#include "evovgm/subst_models.hpp"
#include "evovgm/trainer.hpp"
