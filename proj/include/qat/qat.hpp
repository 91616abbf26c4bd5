#pragma once

#include "qat/tensor.hpp"
#include "qat/tape.hpp"
#include "qat/ops.hpp"
#include "qat/quantizer.hpp"
#include "qat/metrics.hpp"
#include "qat/scheduler.hpp"
#include "qat/optim.hpp"
#include "qat/data.hpp"
#include "qat/model.hpp"
#include "qat/checkpoint.hpp"
#include "qat/config.hpp"
#include "qat/oracle.hpp"
#include "qat/trainer.hpp"
#include "qat/export.hpp"
#include "qat/oracle_suite.hpp"
#include "qat/runtime.hpp"
