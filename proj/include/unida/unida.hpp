#pragma once

#include "unida/common.hpp"
#include "unida/json_util.hpp"
#include "unida/synth_data.hpp"
#include "unida/dataset_io.hpp"
#include "unida/net.hpp"
#include "unida/checkpoint.hpp"
#include "unida/losses.hpp"
#include "unida/optim.hpp"
#include "unida/metrics.hpp"
#include "unida/trainer.hpp"
#include "unida/config.hpp"
#include "unida/experiment.hpp"
