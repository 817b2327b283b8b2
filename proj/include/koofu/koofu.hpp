#pragma once

// Umbrella header: the whole library in one include.

#include "koofu/classify.hpp"   // IWYU pragma: export
#include "koofu/dataset.hpp"    // IWYU pragma: export
#include "koofu/errors.hpp"     // IWYU pragma: export
#include "koofu/eval.hpp"       // IWYU pragma: export
#include "koofu/io.hpp"         // IWYU pragma: export
#include "koofu/metrics.hpp"    // IWYU pragma: export
#include "koofu/parallel.hpp"   // IWYU pragma: export
#include "koofu/stats.hpp"      // IWYU pragma: export
#include "koofu/synth.hpp"      // IWYU pragma: export
#include "koofu/transform.hpp"  // IWYU pragma: export
#include "koofu/types.hpp"      // IWYU pragma: export
