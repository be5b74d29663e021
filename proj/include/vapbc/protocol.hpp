// Copyright 2026 The vapbc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <atomic>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "vapbc/streaming.hpp"

namespace vapbc {

// Newline-delimited JSON messages.
//   in:  {"type":"audio","pcm0":[...],"pcm1":[...],"sample_rate":16000}
//        {"type":"reset"}
//   out: {"type":"prediction",...} | {"type":"ok"} | {"type":"error","code":...,"msg":...}

nlohmann::json prediction_message(const PredictionFrame& frame);
nlohmann::json error_message(const std::string& code, const std::string& msg);

/// Per-connection state machine: one StreamSession, one reply batch per line.
class ProtocolHandler {
 public:
  ProtocolHandler(std::shared_ptr<const RuntimeModel> model, StreamOptions options);

  /// Replies (already serialised, without newline) for one inbound line.
  std::vector<std::string> handle(const std::string& line);

  StreamSession& session() { return session_; }

 private:
  StreamSession session_;
};

/// Serves one session over a pair of streams until EOF.
void serve_stdio(std::shared_ptr<const RuntimeModel> model, const StreamOptions& options, std::istream& in,
                 std::ostream& out);

/// TCP server with one session per connection. Port 0 binds an ephemeral port.
class TcpServer {
 public:
  TcpServer(std::shared_ptr<const RuntimeModel> model, StreamOptions options, unsigned short port,
            const std::string& host = "127.0.0.1");
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  unsigned short port() const;
  /// Accepts connections until stop().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace vapbc
