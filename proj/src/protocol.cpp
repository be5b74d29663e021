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

#include "vapbc/protocol.hpp"

#include <boost/asio.hpp>

#include <iostream>
#include <regex>

#include "vapbc/error.hpp"

namespace vapbc {

namespace asio = boost::asio;
using asio::ip::tcp;

nlohmann::json prediction_message(const PredictionFrame& f) {
  nlohmann::json j{{"type", "prediction"},       {"t", f.t},
                   {"p_bc", f.p_bc},             {"p_vad", {f.p_vad[0], f.p_vad[1]}},
                   {"vap_top_state", f.vap_top_state}, {"zero_shot", f.zero_shot}};
  j["p_continuer"] = f.p_continuer ? nlohmann::json(*f.p_continuer) : nlohmann::json(nullptr);
  j["p_assessment"] = f.p_assessment ? nlohmann::json(*f.p_assessment) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json error_message(const std::string& code, const std::string& msg) {
  return nlohmann::json{{"type", "error"}, {"code", code}, {"msg", msg}};
}

ProtocolHandler::ProtocolHandler(std::shared_ptr<const RuntimeModel> model, StreamOptions options)
    : session_(std::move(model), std::move(options)) {}

namespace {

struct Reject {
  std::string code;
  std::string msg;
};

std::vector<float> read_pcm(const nlohmann::json& j, const char* key) {
  const auto& a = j.at(key);
  if (!a.is_array()) throw Reject{"bad_audio", std::string(key) + " must be an array of numbers"};
  std::vector<float> out;
  out.reserve(a.size());
  for (const auto& v : a) {
    if (!v.is_number()) throw Reject{"bad_audio", std::string(key) + " must be an array of numbers"};
    out.push_back(v.get<float>());
  }
  return out;
}

}  // namespace

std::vector<std::string> ProtocolHandler::handle(const std::string& line) {
  static const std::regex pcm_key("pcm([0-9]+)");
  std::vector<std::string> replies;
  try {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Reject{"bad_json", e.what()};
    }
    if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
      throw Reject{"bad_type", "message needs a string \"type\""};
    }
    const std::string type = j["type"];
    if (type == "reset") {
      session_.reset();
      replies.push_back(nlohmann::json{{"type", "ok"}}.dump());
      return replies;
    }
    if (type != "audio") throw Reject{"bad_type", "unknown message type '" + type + "'"};
    for (const auto& [key, value] : j.items()) {
      std::smatch m;
      if (std::regex_match(key, m, pcm_key) && std::stoul(m[1]) >= 2) {
        throw Reject{"bad_channels", "only pcm0 and pcm1 are accepted"};
      }
    }
    if (!j.contains("pcm0") || !j.contains("pcm1")) throw Reject{"bad_channels", "audio needs pcm0 and pcm1"};
    if (!j.contains("sample_rate") || !j["sample_rate"].is_number() || j["sample_rate"].get<double>() != kSampleRate) {
      throw Reject{"bad_sample_rate", "sample_rate must be 16000"};
    }
    const auto pcm0 = read_pcm(j, "pcm0");
    const auto pcm1 = read_pcm(j, "pcm1");
    if (pcm0.size() != pcm1.size()) throw Reject{"length_mismatch", "pcm0 and pcm1 differ in length"};
    for (const auto& f : session_.push_audio(pcm0, pcm1)) replies.push_back(prediction_message(f).dump());
  } catch (const Reject& r) {
    replies.push_back(error_message(r.code, r.msg).dump());
  } catch (const Error& e) {
    replies.push_back(error_message(std::string(errc_name(e.code())), e.what()).dump());
  }
  return replies;
}

void serve_stdio(std::shared_ptr<const RuntimeModel> model, const StreamOptions& options, std::istream& in,
                 std::ostream& out) {
  ProtocolHandler handler(std::move(model), options);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    for (const auto& r : handler.handle(line)) out << r << '\n';
    out.flush();
  }
}

struct TcpServer::Impl {
  std::shared_ptr<const RuntimeModel> model;
  StreamOptions options;
  asio::io_context io;
  tcp::acceptor acceptor{io};
  std::mutex mutex;
  std::vector<std::shared_ptr<tcp::socket>> sockets;
  std::vector<std::thread> workers;
  std::atomic<bool> stopping{false};

  void accept() {
    auto socket = std::make_shared<tcp::socket>(io);
    acceptor.async_accept(*socket, [this, socket](const boost::system::error_code& ec) {
      if (ec || stopping) return;
      std::lock_guard lock(mutex);
      sockets.push_back(socket);
      workers.emplace_back([this, socket] { serve(socket); });
      accept();
    });
  }

  // Blocking loop for one connection; errors end only this connection.
  void serve(std::shared_ptr<tcp::socket> socket) {
    try {
      StreamOptions o = options;
      ProtocolHandler handler(model, o);
      asio::streambuf buffer;
      boost::system::error_code ec;
      while (true) {
        asio::read_until(*socket, buffer, '\n', ec);
        if (ec) break;
        std::istream is(&buffer);
        std::string line;
        std::getline(is, line);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::string reply;
        for (const auto& r : handler.handle(line)) reply += r + '\n';
        if (!reply.empty()) asio::write(*socket, asio::buffer(reply), ec);
        if (ec) break;
      }
    } catch (const std::exception& e) {
      std::cerr << "connection closed: " << e.what() << '\n';
    }
    boost::system::error_code ignored;
    socket->shutdown(tcp::socket::shutdown_both, ignored);
  }
};

TcpServer::TcpServer(std::shared_ptr<const RuntimeModel> model, StreamOptions options, unsigned short port,
                     const std::string& host)
    : impl_(std::make_unique<Impl>()) {
  impl_->model = std::move(model);
  impl_->options = std::move(options);
  // Validate the model/task pairing before binding.
  StreamSession probe(impl_->model, impl_->options);
  try {
    const tcp::endpoint endpoint(asio::ip::make_address(host), port);
    impl_->acceptor.open(endpoint.protocol());
    impl_->acceptor.set_option(tcp::acceptor::reuse_address(true));
    impl_->acceptor.bind(endpoint);
    impl_->acceptor.listen();
  } catch (const boost::system::system_error& e) {
    throw Error(Errc::BindError, "cannot listen on " + host + ":" + std::to_string(port) + ": " + e.what());
  }
}

TcpServer::~TcpServer() {
  stop();
  for (auto& w : impl_->workers) {
    if (w.joinable()) w.join();
  }
}

unsigned short TcpServer::port() const { return impl_->acceptor.local_endpoint().port(); }

void TcpServer::run() {
  impl_->accept();
  impl_->io.run();
}

void TcpServer::stop() {
  if (impl_->stopping.exchange(true)) return;
  asio::post(impl_->io, [this] {
    boost::system::error_code ignored;
    impl_->acceptor.close(ignored);
  });
  impl_->io.stop();
  std::lock_guard lock(impl_->mutex);
  for (auto& s : impl_->sockets) {
    boost::system::error_code ignored;
    s->shutdown(tcp::socket::shutdown_both, ignored);
  }
}

}  // namespace vapbc
