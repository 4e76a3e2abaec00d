#pragma once

// HTTP captioning wire protocol: POST /caption with a binary PPM frame and
// X-Caption-Seed / X-Top-P headers; the service answers a JSON object with
// "caption" and "model". Client and server live together here so both sides
// of the contract stay in one place.

#include <cstdint>
#include <memory>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "vidcap/pipeline.hpp"

namespace vidcap {

inline CaptionResult HttpCaptioner::caption(const Tensor& frame, std::uint64_t seed) {
    const std::string body = encode_ppm(frame);
    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt <= retries_; ++attempt) {
        httplib::Client client(host_, port_);
        client.set_connection_timeout(0, timeout_ms_ * 1000);
        client.set_read_timeout(0, timeout_ms_ * 1000);
        httplib::Headers headers{{"X-Caption-Seed", std::to_string(seed)}, {"X-Top-P", std::to_string(top_p_)}};
        auto res = client.Post("/caption", headers, body, "image/x-portable-pixmap");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        try {
            const nlohmann::json j = nlohmann::json::parse(res->body);
            return {j.at("caption").get<std::string>(), j.at("model").get<std::string>(), false, ""};
        } catch (const nlohmann::json::exception& e) {
            last_error = std::string("malformed response: ") + e.what();
        }
    }
    return {"", id(), true, last_error};
}

// In-process captioning service wrapping any backend. Used by the CLI's
// serve mode and by tests exercising the remote client.
class CaptionServer {
public:
    explicit CaptionServer(std::shared_ptr<CaptionerBackend> backend) : backend_(std::move(backend)) {
        server_.Post("/caption", [this](const httplib::Request& req, httplib::Response& res) {
            handled_.fetch_add(1, std::memory_order_relaxed);
            std::uint64_t seed = 0;
            if (req.has_header("X-Caption-Seed")) seed = std::stoull(req.get_header_value("X-Caption-Seed"));
            Tensor frame;
            try {
                frame = decode_ppm(req.body);
            } catch (const std::exception& e) {
                res.status = 400;
                res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
                return;
            }
            const CaptionResult r = backend_->caption(frame, seed);
            if (r.failed) {
                res.status = 502;
                res.set_content(nlohmann::json{{"error", r.error}}.dump(), "application/json");
                return;
            }
            res.set_content(nlohmann::json{{"caption", r.caption}, {"model", r.captioner_id}}.dump(),
                            "application/json");
        });
    }

    // Binds an ephemeral port when port == 0; returns the bound port.
    int start(const std::string& host = "127.0.0.1", int port = 0) {
        port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
        if (port_ <= 0) throw ConfigError("caption server failed to bind " + host);
        thread_ = std::thread([this]() { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port_;
    }

    void stop() {
        if (thread_.joinable()) {
            server_.stop();
            thread_.join();
        }
    }

    int port() const { return port_; }
    std::int64_t handled() const { return handled_.load(); }

    ~CaptionServer() { stop(); }

private:
    std::shared_ptr<CaptionerBackend> backend_;
    httplib::Server server_;
    std::thread thread_;
    std::atomic<std::int64_t> handled_{0};
    int port_ = -1;
};

}  // namespace vidcap
