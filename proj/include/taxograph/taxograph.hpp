#pragma once

#include "taxograph/common.hpp"
#include "taxograph/config.hpp"
#include "taxograph/encoder.hpp"
#include "taxograph/graph.hpp"
#include "taxograph/hierarchy.hpp"
#include "taxograph/kmeans.hpp"
#include "taxograph/llm_refiner.hpp"
#include "taxograph/metrics.hpp"
#include "taxograph/objectives.hpp"
#include "taxograph/pipeline.hpp"
#include "taxograph/refiner.hpp"
#include "taxograph/similarity.hpp"
#include "taxograph/synthetic.hpp"
#include "taxograph/taxonomy_tree.hpp"

namespace taxograph {
inline constexpr const char* kVersion = "0.1.0";
}  // namespace taxograph
