#pragma once

#include "snord/common.hpp"
#include "snord/data.hpp"
#include "snord/model.hpp"
#include "snord/attacks.hpp"
#include "snord/nar.hpp"
#include "snord/ssl_generator.hpp"
#include "snord/robust_trainer.hpp"
#include "snord/ord.hpp"
#include "snord/evalreport.hpp"
#include "snord/config.hpp"
#include "snord/experiments.hpp"
#include "snord/run.hpp"
#include "snord/pipeline.hpp"
