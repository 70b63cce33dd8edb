#pragma once

#include "lmrank/embedding_store.hpp"
#include "lmrank/ensemble.hpp"
#include "lmrank/error.hpp"
#include "lmrank/metrics.hpp"
#include "lmrank/normalize.hpp"
#include "lmrank/pipeline.hpp"
#include "lmrank/rerank.hpp"
#include "lmrank/similarity.hpp"
#include "lmrank/synth.hpp"
