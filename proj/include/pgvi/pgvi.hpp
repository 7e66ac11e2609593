#pragma once

#include "pgvi/common.hpp"
#include "pgvi/table.hpp"
#include "pgvi/formula.hpp"
#include "pgvi/design.hpp"
#include "pgvi/pgamma.hpp"
#include "pgvi/distributions.hpp"
#include "pgvi/prior.hpp"
#include "pgvi/state.hpp"
#include "pgvi/cavi.hpp"
#include "pgvi/draws.hpp"
#include "pgvi/mavb.hpp"
#include "pgvi/gibbs.hpp"
#include "pgvi/evalkit.hpp"
#include "pgvi/simlab.hpp"
#include "pgvi/report.hpp"
