#ifndef ELSD_ELSD_HPP
#define ELSD_ELSD_HPP

#include "elsd/detection.hpp"
#include "elsd/errors.hpp"
#include "elsd/io.hpp"
#include "elsd/linalg.hpp"
#include "elsd/pipeline.hpp"
#include "elsd/solver.hpp"
#include "elsd/structured_sparsity.hpp"
#include "elsd/synth.hpp"
#include "elsd/version.hpp"

#endif // ELSD_ELSD_HPP
