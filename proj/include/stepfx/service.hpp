// Copyright 2026 The stepfx Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "stepfx/engine.hpp"

namespace stepfx {

struct ServiceConfig {
  /// When set, every session is saved under <dir>/<id>/ after each
  /// mutation and reloaded at startup.
  std::optional<std::filesystem::path> session_dir;
  /// A second mutation on a busy session waits instead of getting 409.
  bool queue_mutations = false;
  std::uint64_t seed = 0;  // session ids and challenge chains
  double epsilon = kDefaultEpsilon;
};

/// Local HTTP/JSON session service. See docs/api.md for the endpoints.
class Service {
 public:
  Service(std::shared_ptr<const ModelRegistry> models, ServiceConfig config = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds and serves until stop(). False if the address cannot be bound.
  bool listen(const std::string& host, int port);
  /// Binds an ephemeral port and returns it; follow with serve().
  int bind_any(const std::string& host = "127.0.0.1");
  void serve();
  void stop();
  /// Blocks until the server accepts connections.
  void wait_until_ready() const;

  std::size_t session_count() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Standard base64 without line breaks.
std::string base64_encode(std::string_view bytes);
/// ValidationError("wav_base64") on malformed input.
std::string base64_decode(std::string_view text);

}  // namespace stepfx
