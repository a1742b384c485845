#pragma once

#include "semsat/channel.hpp"
#include "semsat/csa.hpp"
#include "semsat/dataset.hpp"
#include "semsat/dtjscc.hpp"
#include "semsat/errors.hpp"
#include "semsat/geometry.hpp"
#include "semsat/harness.hpp"
#include "semsat/micronn.hpp"
#include "semsat/modem.hpp"
#include "semsat/random.hpp"
