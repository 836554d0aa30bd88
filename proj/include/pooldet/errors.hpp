// Copyright 2026 The pooldet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <stdexcept>
#include <string>

namespace pooldet {

// A configuration value or function argument outside its allowed range.
class InvalidParameter : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A ground-truth annotation that cannot be labeled (e.g. zero area).
class InvalidAnnotation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Mismatched shapes between cooperating tensors or parameter sets.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A numeric input outside the domain of a function (e.g. log of 0).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Dataset, checkpoint or detection file problems.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pooldet
