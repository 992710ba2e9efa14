#pragma once

#include "ctm/calib.hpp"
#include "ctm/config.hpp"
#include "ctm/core.hpp"
#include "ctm/error.hpp"
#include "ctm/explain.hpp"
#include "ctm/features.hpp"
#include "ctm/gbt.hpp"
#include "ctm/ingest.hpp"
#include "ctm/loso.hpp"
#include "ctm/metrics.hpp"
#include "ctm/pipeline.hpp"
#include "ctm/report.hpp"
#include "ctm/rt.hpp"
#include "ctm/stat_tests.hpp"
#include "ctm/streams.hpp"
#include "ctm/synth.hpp"
