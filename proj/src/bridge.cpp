// SPDX-License-Identifier: Apache-2.0
#include "distill3d/bridge.hpp"

#include <httplib.h>
#include <openssl/evp.h>

#include <bit>
#include <cmath>
#include <cstring>

#include "distill3d/errors.hpp"

namespace distill3d::bridge {

std::string base64_encode(std::span<const unsigned char> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), int(bytes.size()));
    out.resize(std::size_t(n));
    return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
    if (text.size() % 4 != 0) throw ProtocolError("bad_tensor", "base64 length not a multiple of 4");
    std::vector<unsigned char> out(3 * (text.size() / 4));
    if (text.empty()) return out;
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), int(text.size()));
    if (n < 0) throw ProtocolError("bad_tensor", "invalid base64 payload");
    std::size_t pad = 0;
    if (text.back() == '=') ++pad;
    if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
    out.resize(std::size_t(n) - pad);
    return out;
}

namespace {

static_assert(std::endian::native == std::endian::little, "bridge wire format assumes a little-endian host");

std::size_t element_count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= std::size_t(d);
    return n;
}

}  // namespace

json encode_tensor(std::span<const double> values, const std::vector<int>& shape) {
    if (element_count(shape) != values.size()) throw InvalidArgument("encode_tensor: shape does not match data");
    std::vector<float> f(values.begin(), values.end());
    const auto* bytes = reinterpret_cast<const unsigned char*>(f.data());
    return json{{"shape", shape}, {"data_b64", base64_encode({bytes, f.size() * sizeof(float)})}};
}

json encode_tensor(const Tensor& t) { return encode_tensor(t.data, {t.channels, t.height, t.width}); }

WireTensor decode_tensor(const json& j) {
    if (!j.is_object() || !j.contains("shape") || !j.contains("data_b64") || !j["shape"].is_array() ||
        !j["data_b64"].is_string())
        throw ProtocolError("bad_tensor", "tensor needs 'shape' array and 'data_b64' string");
    WireTensor t;
    for (const auto& d : j["shape"]) {
        if (!d.is_number_integer() || d.get<long long>() < 0 || d.get<long long>() > (1 << 24))
            throw ProtocolError("bad_tensor", "shape entries must be non-negative integers");
        t.shape.push_back(d.get<int>());
    }
    const auto bytes = base64_decode(j["data_b64"].get<std::string>());
    const std::size_t n = element_count(t.shape);
    if (bytes.size() != n * sizeof(float))
        throw ProtocolError("bad_tensor", "payload has " + std::to_string(bytes.size()) + " bytes, shape needs " +
                                              std::to_string(n * sizeof(float)));
    t.data.resize(n);
    std::memcpy(t.data.data(), bytes.data(), bytes.size());
    return t;
}

Tensor decode_latent(const json& j) {
    if (j.is_object() && j.contains("shape") && j["shape"].is_array() && j["shape"].size() != 3)
        throw ProtocolError("bad_shape", "latent must have rank 3 [C,H,W]");
    WireTensor w = decode_tensor(j);
    if (w.shape.size() != 3) throw ProtocolError("bad_shape", "latent must have rank 3 [C,H,W]");
    Tensor t(w.shape[0], w.shape[1], w.shape[2]);
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = w.data[i];
    return t;
}

json serialize_request(const DenoiseRequest& r) {
    json body{{"kind", denoiser_kind_name(r.kind)},
              {"t", r.t},
              {"latent", encode_tensor(r.latent)},
              {"text_embedding",
               encode_tensor(r.condition.text_embedding, {static_cast<int>(r.condition.text_embedding.size())})},
              {"guidance_scale", r.condition.guidance_scale}};
    if (r.condition.image_prompt)
        body["image_prompt"] =
            encode_tensor(r.condition.image_prompt->vector, {static_cast<int>(r.condition.image_prompt->vector.size())});
    if (r.condition.relative_pose) {
        const auto& rel = *r.condition.relative_pose;
        body["relative_pose"] = {{"R", rel.R.m}, {"T", {rel.T.x, rel.T.y, rel.T.z}}};
    }
    if (r.condition.reference_image) {
        const Image& img = *r.condition.reference_image;
        std::vector<double> chw(img.pixels.size());
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < img.height; ++y)
                for (int x = 0; x < img.width; ++x)
                    chw[(std::size_t(c) * img.height + y) * img.width + x] = img.at(x, y, c);
        body["reference_image"] = encode_tensor(chw, {3, img.height, img.width});
    }
    return body;
}

DenoiseRequest parse_request(const json& body) {
    if (!body.is_object()) throw ProtocolError("bad_json", "request body must be a JSON object");
    DenoiseRequest r;
    try {
        r.kind = parse_denoiser_kind(body.value("kind", std::string{}));
    } catch (const InvalidArgument& e) {
        throw ProtocolError("bad_kind", e.what());
    }
    if (!body.contains("t") || !body["t"].is_number_integer()) throw ProtocolError("bad_timestep", "'t' must be an integer");
    r.t = body["t"].get<int>();
    if (r.t < 1) throw ProtocolError("bad_timestep", "'t' must be >= 1");
    if (!body.contains("latent")) throw ProtocolError("bad_tensor", "missing 'latent'");
    r.latent = decode_latent(body["latent"]);
    if (body.contains("text_embedding")) {
        const WireTensor te = decode_tensor(body["text_embedding"]);
        r.condition.text_embedding.assign(te.data.begin(), te.data.end());
    }
    if (body.contains("image_prompt") && !body["image_prompt"].is_null()) {
        const WireTensor ip = decode_tensor(body["image_prompt"]);
        const int patches = static_cast<int>(std::lround(std::sqrt(ip.data.size() / 3.0)));
        if (std::size_t(3) * patches * patches != ip.data.size())
            throw ProtocolError("bad_shape", "image_prompt length must be 3·P²");
        r.condition.image_prompt = ImagePromptEmbedding{patches, {ip.data.begin(), ip.data.end()}};
    }
    if (body.contains("relative_pose") && !body["relative_pose"].is_null()) {
        const json& rp = body["relative_pose"];
        if (!rp.contains("R") || !rp.contains("T") || !rp["R"].is_array() || !rp["T"].is_array() ||
            rp["R"].size() != 9 || rp["T"].size() != 3)
            throw ProtocolError("bad_pose", "relative_pose needs R[9] and T[3]");
        for (const auto* arr : {&rp["R"], &rp["T"]})
            for (const auto& v : *arr)
                if (!v.is_number()) throw ProtocolError("bad_pose", "relative_pose entries must be numbers");
        RelativePose rel;
        for (int i = 0; i < 9; ++i) rel.R.m[i] = rp["R"][i].get<double>();
        rel.T = {rp["T"][0].get<double>(), rp["T"][1].get<double>(), rp["T"][2].get<double>()};
        r.condition.relative_pose = rel;
    }
    if (body.contains("reference_image") && !body["reference_image"].is_null()) {
        const WireTensor ri = decode_tensor(body["reference_image"]);
        if (ri.shape.size() != 3 || ri.shape[0] != 3) throw ProtocolError("bad_shape", "reference_image must be [3,H,W]");
        Image img(ri.shape[2], ri.shape[1]);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < img.height; ++y)
                for (int x = 0; x < img.width; ++x)
                    img.at(x, y, c) = ri.data[(std::size_t(c) * img.height + y) * img.width + x];
        r.condition.reference_image = std::move(img);
    }
    if (body.contains("guidance_scale")) {
        if (!body["guidance_scale"].is_number()) throw ProtocolError("bad_json", "'guidance_scale' must be a number");
        r.condition.guidance_scale = body["guidance_scale"].get<double>();
    }
    return r;
}

json serialize_response(const Tensor& eps) { return json{{"eps", encode_tensor(eps)}}; }

json error_body(const std::string& code, const std::string& detail) { return json{{"error", code}, {"detail", detail}}; }

json schedule_to_json(const NoiseSchedule& s) { return json{{"num_steps", s.num_steps()}, {"betas", s.betas()}}; }

NoiseSchedule schedule_from_json(const json& j) {
    if (!j.is_object() || !j.contains("betas") || !j["betas"].is_array())
        throw ProtocolError("malformed_response", "schedule reply lacks 'betas'");
    auto betas = j["betas"].get<std::vector<double>>();
    if (j.contains("num_steps") && j["num_steps"].get<std::size_t>() != betas.size())
        throw ProtocolError("malformed_response", "num_steps disagrees with betas length");
    try {
        return NoiseSchedule(std::move(betas));
    } catch (const InvalidArgument& e) {
        throw ProtocolError("malformed_response", e.what());
    }
}

// ---------------------------------------------------------------------------

RemoteDenoiser::RemoteDenoiser(std::string endpoint, DenoiserKind kind, std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), kind_(kind), timeout_(timeout) {
    const auto scheme_end = endpoint_.find("://");
    if (scheme_end == std::string::npos) throw InvalidArgument("bridge endpoint needs a scheme: " + endpoint_);
    const auto path_start = endpoint_.find('/', scheme_end + 3);
    host_ = endpoint_.substr(0, path_start);
    base_path_ = path_start == std::string::npos ? "" : endpoint_.substr(path_start);
    while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
}

namespace {

json parse_reply(const httplib::Result& res, const std::string& what) {
    if (!res) throw TransportError(what + ": " + httplib::to_string(res.error()));
    json body;
    try {
        body = json::parse(res->body);
    } catch (const json::exception& e) {
        throw ProtocolError("malformed_response", what + ": reply is not JSON (" + e.what() + ")");
    }
    if (res->status != 200) {
        if (body.is_object() && body.contains("error") && body["error"].is_string())
            throw ProtocolError(body["error"].get<std::string>(), body.value("detail", std::string{}));
        throw ProtocolError("http_" + std::to_string(res->status), what);
    }
    return body;
}

}  // namespace

Tensor RemoteDenoiser::predict(const Tensor& noisy, int t, const DenoiserCondition& cond) const {
    httplib::Client client(host_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    const DenoiseRequest req{kind_, t, noisy, cond};
    const auto res = client.Post(base_path_ + "/v1/denoise", serialize_request(req).dump(), "application/json");
    const json body = parse_reply(res, "POST " + endpoint_ + "/v1/denoise");
    if (!body.is_object() || !body.contains("eps")) throw ProtocolError("malformed_response", "reply lacks 'eps'");
    Tensor eps;
    try {
        eps = decode_latent(body["eps"]);
    } catch (const ProtocolError& e) {
        throw ProtocolError("malformed_response", e.what());
    }
    if (!eps.same_shape(noisy))
        throw ProtocolError("shape_mismatch", "eps shape [" + std::to_string(eps.channels) + "," +
                                                  std::to_string(eps.height) + "," + std::to_string(eps.width) +
                                                  "] differs from request");
    return eps;
}

NoiseSchedule RemoteDenoiser::fetch_schedule() const {
    httplib::Client client(host_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    return schedule_from_json(parse_reply(client.Get(base_path_ + "/v1/schedule"), "GET " + endpoint_ + "/v1/schedule"));
}

std::shared_ptr<Denoiser> remote_denoiser(const std::string& endpoint, DenoiserKind kind) {
    return std::make_shared<RemoteDenoiser>(endpoint, kind);
}

}  // namespace distill3d::bridge
