#pragma once

#include "reformat/bio_features.hpp"
#include "reformat/common.hpp"
#include "reformat/csv.hpp"
#include "reformat/dataset.hpp"
#include "reformat/evaluation.hpp"
#include "reformat/feature_fusion.hpp"
#include "reformat/linear_models.hpp"
#include "reformat/neural.hpp"
#include "reformat/pipeline.hpp"
#include "reformat/run.hpp"
#include "reformat/seq_features.hpp"
#include "reformat/splits.hpp"
#include "reformat/struct_features.hpp"
#include "reformat/synthetic.hpp"
#include "reformat/tuning.hpp"
