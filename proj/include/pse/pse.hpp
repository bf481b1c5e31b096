// pse/pse.hpp
//
// Copyright 2026  The pse-toolkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Umbrella include.

#ifndef PSE_PSE_HPP_
#define PSE_PSE_HPP_

#include "pse/audio.hpp"
#include "pse/dsp.hpp"
#include "pse/error.hpp"
#include "pse/experiments.hpp"
#include "pse/manifest.hpp"
#include "pse/metrics.hpp"
#include "pse/mixer.hpp"
#include "pse/rng.hpp"
#include "pse/sepnet.hpp"
#include "pse/subprocess.hpp"
#include "pse/synthesis.hpp"
#include "pse/toyworld.hpp"
#include "pse/trainer.hpp"

#endif  // PSE_PSE_HPP_
