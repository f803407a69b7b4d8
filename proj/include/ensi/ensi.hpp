#pragma once

// Everything at once.

#include "ensi/approx.hpp"
#include "ensi/blocks.hpp"
#include "ensi/core/bytes.hpp"
#include "ensi/core/error.hpp"
#include "ensi/core/matrix.hpp"
#include "ensi/core/rng.hpp"
#include "ensi/he/backend.hpp"
#include "ensi/he/serialize.hpp"
#include "ensi/io/config.hpp"
#include "ensi/io/csv.hpp"
#include "ensi/io/keys.hpp"
#include "ensi/io/service.hpp"
#include "ensi/io/weights.hpp"
#include "ensi/io/wire.hpp"
#include "ensi/linalg.hpp"
#include "ensi/packing.hpp"
#include "ensi/reference.hpp"
#include "ensi/runtime/counters.hpp"
#include "ensi/runtime/stage.hpp"
#include "ensi/runtime/tracker.hpp"
