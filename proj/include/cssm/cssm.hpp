#ifndef CSSM_CSSM_HPP
#define CSSM_CSSM_HPP

#include "cssm/copulas.hpp"
#include "cssm/distributions.hpp"
#include "cssm/inference.hpp"
#include "cssm/io.hpp"
#include "cssm/marginal.hpp"
#include "cssm/model.hpp"
#include "cssm/pipeline.hpp"
#include "cssm/predict.hpp"
#include "cssm/random.hpp"
#include "cssm/sampler.hpp"

#endif  // CSSM_CSSM_HPP
