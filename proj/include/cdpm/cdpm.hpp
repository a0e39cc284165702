#pragma once

// Umbrella header.
#include "cdpm/baselines.hpp"
#include "cdpm/cdsm.hpp"
#include "cdpm/checkpoint.hpp"
#include "cdpm/config.hpp"
#include "cdpm/core/nn.hpp"
#include "cdpm/core/ops.hpp"
#include "cdpm/core/random.hpp"
#include "cdpm/core/tensor.hpp"
#include "cdpm/core/version.hpp"
#include "cdpm/data.hpp"
#include "cdpm/diffusion.hpp"
#include "cdpm/experiment.hpp"
#include "cdpm/model.hpp"
#include "cdpm/optim.hpp"
#include "cdpm/ptm.hpp"
#include "cdpm/report.hpp"
#include "cdpm/series.hpp"
#include "cdpm/synth.hpp"
#include "cdpm/trainer.hpp"
