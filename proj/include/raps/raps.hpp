#pragma once

#include "raps/classifier.hpp"
#include "raps/core.hpp"
#include "raps/data.hpp"
#include "raps/encoder.hpp"
#include "raps/error.hpp"
#include "raps/fusion.hpp"
#include "raps/model.hpp"
#include "raps/optimizer.hpp"
#include "raps/prototype.hpp"
#include "raps/trainer.hpp"
