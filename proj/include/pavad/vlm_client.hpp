#pragma once

#include <memory>
#include <string>

#include "pavad/curate.hpp"

namespace pavad::curate {

struct HttpVlmConfig {
  std::string url;  // full endpoint, e.g. http://host:8000/v1/chat/completions
  std::string api_key;
  std::string model = "default";
  double timeout_s = 60.0;
};

// Chat-completions style client. The image is sent inline as a base64 data URL.
class HttpVlmClient : public VlmClient {
 public:
  explicit HttpVlmClient(HttpVlmConfig cfg);
  std::string complete(const ImageRef& image, const std::string& instruction, const std::string& class_name) override;

  const HttpVlmConfig& config() const { return cfg_; }

 private:
  HttpVlmConfig cfg_;
  std::string origin_;
  std::string path_;
};

// Request body for one refinement call (exposed for tests).
std::string chat_request_body(const std::string& model, const std::string& instruction, const std::string& class_name,
                              const std::string& image_bytes, const std::string& mime);
// Extracts the assistant text; throws VlmError on an unexpected shape.
std::string parse_chat_response(const std::string& body);

// Built from PAVAD_VLM_URL / PAVAD_VLM_KEY / PAVAD_VLM_MODEL; null when no URL is set.
std::unique_ptr<VlmClient> vlm_client_from_env(double timeout_s);

}  // namespace pavad::curate
