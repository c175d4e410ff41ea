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

#include <sstream>
#include <stdexcept>
#include <string>

namespace misp {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or size of an argument is wrong.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// File metadata (sidecar, header fields) is missing or invalid.
class MetadataError : public Error {
 public:
  using Error::Error;
};

// A numeric or structural argument is out of its documented range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Configuration is inconsistent or incomplete.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// An external artifact could not be loaded.
class LoadError : public Error {
 public:
  using Error::Error;
};

// Training diverged or hit a non-recoverable runtime state.
class TrainingError : public Error {
 public:
  using Error::Error;
};

class NotImplementedError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void cat_into(std::ostringstream&) {}

template <typename A, typename... Rest>
void cat_into(std::ostringstream& os, const A& a, const Rest&... rest) {
  os << a;
  cat_into(os, rest...);
}

}  // namespace detail

template <typename... Parts>
std::string strcat(const Parts&... parts) {
  std::ostringstream os;
  detail::cat_into(os, parts...);
  return os.str();
}

template <typename E = Error, typename... Parts>
void check(bool cond, const Parts&... parts) {
  if (!cond) throw E(strcat(parts...));
}

}  // namespace misp
