// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fscil/autodiff.hpp"
#include "fscil/checkpoint.hpp"
#include "fscil/config.hpp"
#include "fscil/data.hpp"
#include "fscil/error.hpp"
#include "fscil/experiment.hpp"
#include "fscil/feature_io.hpp"
#include "fscil/gradcheck.hpp"
#include "fscil/gradsuite.hpp"
#include "fscil/losses.hpp"
#include "fscil/metrics.hpp"
#include "fscil/model.hpp"
#include "fscil/outputs.hpp"
#include "fscil/protocol.hpp"
#include "fscil/proxies.hpp"
#include "fscil/rng.hpp"
#include "fscil/tensor.hpp"
