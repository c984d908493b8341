#include <httplib.h>

#include "patchguard/core/errors.hpp"
#include "patchguard/core/io.hpp"
#include "patchguard/masking/masking.hpp"

namespace patchguard::masking {

namespace {

// "http://host:port/prefix" -> ("http://host:port", "/prefix")
std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
  const auto scheme = endpoint.find("://");
  const auto path = endpoint.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (path == std::string::npos) return {endpoint, ""};
  std::string prefix = endpoint.substr(path);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {endpoint.substr(0, path), prefix};
}

}  // namespace

BinaryMask segment_external(const ImageTensor& img, const std::string& endpoint, double timeout_seconds) {
  if (endpoint.empty()) throw InvalidConfig("external segmenter endpoint is empty");
  const auto [base, prefix] = split_endpoint(endpoint);
  httplib::Client client(base);
  const auto timeout = std::chrono::milliseconds(static_cast<long>(timeout_seconds * 1000.0));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  const auto body = encode_png(img);
  auto res = client.Post(prefix + "/segment", reinterpret_cast<const char*>(body.data()), body.size(), "image/png");
  if (!res) throw TransportError("segmenter request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw TransportError("segmenter returned HTTP " + std::to_string(res->status));

  BinaryMask mask;
  try {
    mask = decode_mask_png(std::vector<unsigned char>(res->body.begin(), res->body.end()));
  } catch (const FormatError& e) {
    throw MalformedResponse(std::string("segmenter response is not a mask PNG: ") + e.what());
  }
  if (mask.height() != img.height() || mask.width() != img.width()) {
    throw MalformedResponse("segmenter mask is " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                            ", expected " + std::to_string(img.height()) + "x" + std::to_string(img.width()));
  }
  if (mask.count() == 0) throw EmptyMask("segmenter returned an all-background mask");
  return mask;
}

}  // namespace patchguard::masking
