#include "pavad/vlm_client.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>

#include "httplib.h"
#include "json.hpp"

namespace pavad::curate {

using nlohmann::json;

namespace {

std::string mime_for(const std::string& path) {
  auto ext = std::filesystem::path(path).extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".png") return "image/png";
  if (ext == ".webp") return "image/webp";
  return "image/jpeg";
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VlmError("cannot read init image " + path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

std::string chat_request_body(const std::string& model, const std::string& instruction, const std::string& class_name,
                              const std::string& image_bytes, const std::string& mime) {
  json text_part = {{"type", "text"}, {"text", instruction + "\nAnomaly class: " + class_name}};
  json image_part = {{"type", "image_url"},
                     {"image_url", {{"url", "data:" + mime + ";base64," + httplib::detail::base64_encode(image_bytes)}}}};
  json body = {{"model", model},
               {"messages", json::array({{{"role", "user"}, {"content", json::array({text_part, image_part})}}})}};
  return body.dump();
}

std::string parse_chat_response(const std::string& body) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    throw VlmError(std::string("response is not JSON: ") + e.what());
  }
  try {
    const auto& content = doc.at("choices").at(0).at("message").at("content");
    if (content.is_string()) return content.get<std::string>();
    std::string out;
    for (const auto& part : content) {
      if (part.value("type", std::string{}) == "text") out += part.at("text").get<std::string>();
    }
    return out;
  } catch (const json::exception& e) {
    throw VlmError(std::string("unexpected response shape: ") + e.what());
  }
}

HttpVlmClient::HttpVlmClient(HttpVlmConfig cfg) : cfg_(std::move(cfg)) {
  const auto scheme_end = cfg_.url.find("://");
  if (scheme_end == std::string::npos) throw std::invalid_argument("VLM url needs a scheme: " + cfg_.url);
  const auto path_start = cfg_.url.find('/', scheme_end + 3);
  origin_ = cfg_.url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : cfg_.url.substr(path_start);
  if (!(cfg_.timeout_s > 0.0)) throw std::invalid_argument("VLM timeout must be positive");
}

std::string HttpVlmClient::complete(const ImageRef& image, const std::string& instruction,
                                    const std::string& class_name) {
  const auto body = chat_request_body(cfg_.model, instruction, class_name, read_bytes(image.path), mime_for(image.path));
  httplib::Client cli(origin_);
  const auto secs = static_cast<time_t>(cfg_.timeout_s);
  const auto usecs = static_cast<time_t>((cfg_.timeout_s - std::floor(cfg_.timeout_s)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);
  auto res = cli.Post(path_, headers, body, "application/json");
  if (!res) throw VlmError("request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw VlmError("HTTP " + std::to_string(res->status));
  return parse_chat_response(res->body);
}

std::unique_ptr<VlmClient> vlm_client_from_env(double timeout_s) {
  const char* url = std::getenv("PAVAD_VLM_URL");
  if (!url || !*url) return nullptr;
  HttpVlmConfig cfg;
  cfg.url = url;
  if (const char* key = std::getenv("PAVAD_VLM_KEY")) cfg.api_key = key;
  if (const char* model = std::getenv("PAVAD_VLM_MODEL"); model && *model) cfg.model = model;
  cfg.timeout_s = timeout_s;
  return std::make_unique<HttpVlmClient>(cfg);
}

}  // namespace pavad::curate
