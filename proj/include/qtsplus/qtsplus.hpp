// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "qtsplus/autodiff.hpp"
#include "qtsplus/budget.hpp"
#include "qtsplus/config.hpp"
#include "qtsplus/csv.hpp"
#include "qtsplus/error.hpp"
#include "qtsplus/gate.hpp"
#include "qtsplus/harness/ablation.hpp"
#include "qtsplus/harness/bench.hpp"
#include "qtsplus/harness/correlation.hpp"
#include "qtsplus/harness/trainer.hpp"
#include "qtsplus/harness/workload.hpp"
#include "qtsplus/io.hpp"
#include "qtsplus/keyvalue.hpp"
#include "qtsplus/matrix.hpp"
#include "qtsplus/numerics.hpp"
#include "qtsplus/objective.hpp"
#include "qtsplus/reencoder.hpp"
#include "qtsplus/rng.hpp"
#include "qtsplus/scoring.hpp"
#include "qtsplus/selector.hpp"
#include "qtsplus/serialization.hpp"
