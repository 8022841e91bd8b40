// Copyright 2026 The oodcert Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "oodcert/autodiff.hpp"
#include "oodcert/certificates.hpp"
#include "oodcert/checkpoint.hpp"
#include "oodcert/config.hpp"
#include "oodcert/datagen.hpp"
#include "oodcert/dataset.hpp"
#include "oodcert/decision.hpp"
#include "oodcert/diffusion.hpp"
#include "oodcert/error.hpp"
#include "oodcert/io.hpp"
#include "oodcert/likelihood.hpp"
#include "oodcert/models.hpp"
#include "oodcert/ode.hpp"
#include "oodcert/ops.hpp"
#include "oodcert/optim.hpp"
#include "oodcert/pipeline.hpp"
#include "oodcert/record.hpp"
#include "oodcert/report.hpp"
#include "oodcert/rng.hpp"
#include "oodcert/tensor.hpp"
#include "oodcert/train.hpp"
