// Copyright (c) 2026 The misp authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "misp/autograd.hpp"
#include "misp/backbone.hpp"
#include "misp/checkpoint.hpp"
#include "misp/common.hpp"
#include "misp/config.hpp"
#include "misp/evalmetrics.hpp"
#include "misp/flowalign.hpp"
#include "misp/gcm.hpp"
#include "misp/harness.hpp"
#include "misp/io.hpp"
#include "misp/losses.hpp"
#include "misp/nn.hpp"
#include "misp/optim.hpp"
#include "misp/params.hpp"
#include "misp/random.hpp"
#include "misp/rawdata.hpp"
#include "misp/tensor.hpp"
