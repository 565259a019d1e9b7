#pragma once

#include "baseline.hpp"
#include "csv.hpp"
#include "data.hpp"
#include "engine.hpp"
#include "error.hpp"
#include "families.hpp"
#include "intercepts.hpp"
#include "links.hpp"
#include "methods.hpp"
#include "random.hpp"
#include "serialize.hpp"
#include "simlab.hpp"
