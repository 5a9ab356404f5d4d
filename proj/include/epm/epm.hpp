#pragma once

#include "epm/dataset.hpp"
#include "epm/gradcheck.hpp"
#include "epm/judges.hpp"
#include "epm/logistic.hpp"
#include "epm/lora.hpp"
#include "epm/optim.hpp"
#include "epm/parsing.hpp"
#include "epm/pipelines.hpp"
#include "epm/retrieval.hpp"
#include "epm/reward.hpp"
#include "epm/version.hpp"
