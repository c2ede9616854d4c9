#pragma once

#include "foepnr/calibration.hpp"
#include "foepnr/config.hpp"
#include "foepnr/errors.hpp"
#include "foepnr/eval.hpp"
#include "foepnr/foe.hpp"
#include "foepnr/image.hpp"
#include "foepnr/io.hpp"
#include "foepnr/ipiano.hpp"
#include "foepnr/metrics.hpp"
#include "foepnr/noise.hpp"
#include "foepnr/parallel.hpp"
#include "foepnr/pipeline.hpp"
#include "foepnr/trainer.hpp"
#include "foepnr/vst.hpp"
