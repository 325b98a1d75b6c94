#pragma once

#include "ptcbf/baseline.hpp"
#include "ptcbf/driver.hpp"
#include "ptcbf/dynamics.hpp"
#include "ptcbf/errors.hpp"
#include "ptcbf/fuel_model.hpp"
#include "ptcbf/harness/checkpoint.hpp"
#include "ptcbf/harness/config.hpp"
#include "ptcbf/harness/environment.hpp"
#include "ptcbf/harness/episode.hpp"
#include "ptcbf/harness/evaluate.hpp"
#include "ptcbf/harness/outputs.hpp"
#include "ptcbf/harness/train.hpp"
#include "ptcbf/nn.hpp"
#include "ptcbf/policy.hpp"
#include "ptcbf/safety.hpp"
#include "ptcbf/trainer.hpp"
