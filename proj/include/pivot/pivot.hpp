#pragma once

#include "pivot/errors.hpp"
#include "pivot/core.hpp"
#include "pivot/prompts.hpp"
#include "pivot/gateway.hpp"
#include "pivot/remote.hpp"
#include "pivot/judge.hpp"
#include "pivot/engine.hpp"
#include "pivot/evaluation.hpp"
#include "pivot/record.hpp"
#include "pivot/corpus.hpp"
#include "pivot/harness.hpp"
#include "pivot/config.hpp"
#include "pivot/service.hpp"
