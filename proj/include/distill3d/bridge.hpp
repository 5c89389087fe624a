// SPDX-License-Identifier: Apache-2.0
#pragma once

// Client side of the denoiser bridge protocol (HTTP/1.1 + JSON):
//
//   GET  /v1/schedule -> {"num_steps": N, "betas": [...]}
//   POST /v1/denoise  -> {"eps": <tensor>}
//   errors            -> HTTP 400 {"error": "<code>", "detail": "..."}
//
// A tensor is {"shape": [...], "data_b64": base64(little-endian float32, row-major)}.

#include <chrono>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distill3d/diffusion.hpp"

namespace distill3d::bridge {

using json = nlohmann::json;

std::string base64_encode(std::span<const unsigned char> bytes);
/// Throws ProtocolError("bad_tensor") on malformed input.
std::vector<unsigned char> base64_decode(const std::string& text);

struct WireTensor {
    std::vector<int> shape;
    std::vector<float> data;
};

json encode_tensor(std::span<const double> values, const std::vector<int>& shape);
json encode_tensor(const Tensor& t);
/// Validates shape entries and payload length. Throws ProtocolError("bad_tensor").
WireTensor decode_tensor(const json& j);
/// Rank-3 [C,H,W] tensor. Throws ProtocolError("bad_shape") for any other rank.
Tensor decode_latent(const json& j);

struct DenoiseRequest {
    DenoiserKind kind = DenoiserKind::Pretrain;
    int t = 1;
    Tensor latent;
    DenoiserCondition condition;
};

json serialize_request(const DenoiseRequest& request);
/// Throws ProtocolError with codes bad_json, bad_kind, bad_timestep, bad_shape, bad_tensor, bad_pose.
DenoiseRequest parse_request(const json& body);

json serialize_response(const Tensor& eps);
json error_body(const std::string& code, const std::string& detail);

json schedule_to_json(const NoiseSchedule& schedule);
NoiseSchedule schedule_from_json(const json& j);

/// Denoiser backed by a bridge endpoint such as "http://127.0.0.1:8710". A fresh
/// connection is used per request so concurrent calls do not share state.
class RemoteDenoiser final : public Denoiser {
public:
    RemoteDenoiser(std::string endpoint, DenoiserKind kind,
                   std::chrono::milliseconds timeout = std::chrono::milliseconds(30000));

    /// Throws TransportError when the endpoint is unreachable and ProtocolError on
    /// error replies, malformed JSON or an eps tensor whose shape differs from the request.
    Tensor predict(const Tensor& noisy, int t, const DenoiserCondition& cond) const override;
    DenoiserKind kind() const override { return kind_; }

    NoiseSchedule fetch_schedule() const;
    const std::string& endpoint() const noexcept { return endpoint_; }

private:
    std::string endpoint_;
    std::string host_;        // scheme://host:port
    std::string base_path_;   // path prefix without trailing slash
    DenoiserKind kind_;
    std::chrono::milliseconds timeout_;
};

std::shared_ptr<Denoiser> remote_denoiser(const std::string& endpoint, DenoiserKind kind);

}  // namespace distill3d::bridge
