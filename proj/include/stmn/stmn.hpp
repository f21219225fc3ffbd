#pragma once

#include "stmn/errors.hpp"
#include "stmn/numerics/adam.hpp"
#include "stmn/numerics/checkpoint.hpp"
#include "stmn/numerics/gradcheck.hpp"
#include "stmn/numerics/ops.hpp"
#include "stmn/numerics/tensor.hpp"
#include "stmn/scene/encoder.hpp"
#include "stmn/scene/scene.hpp"
#include "stmn/scene/superpoints.hpp"
#include "stmn/language/conllu.hpp"
#include "stmn/language/embedding.hpp"
#include "stmn/language/expression_gen.hpp"
#include "stmn/language/graph.hpp"
#include "stmn/language/laplacian.hpp"
#include "stmn/ddi/ddi.hpp"
#include "stmn/stm/stm.hpp"
#include "stmn/objective/losses.hpp"
#include "stmn/harness/config.hpp"
#include "stmn/harness/dataset.hpp"
#include "stmn/harness/model.hpp"
#include "stmn/harness/evaluate.hpp"
#include "stmn/harness/train.hpp"
#include "stmn/harness/ablate.hpp"
#include "stmn/harness/bench.hpp"
#include "stmn/harness/gradcheck_suite.hpp"
