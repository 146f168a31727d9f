#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <filesystem>

#include "forgebox/errors.hpp"
#include "forgebox/imagestore.hpp"
#include "fsutil.hpp"

namespace forgebox::imagestore {

namespace {

std::string http_get(const std::string& url) {
  auto scheme_end = url.find("://");
  auto path_start = url.find('/', scheme_end + 3);
  std::string origin = url.substr(0, path_start);
  std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

  httplib::Client client(origin);
  client.set_follow_location(true);
  client.set_connection_timeout(10);
  client.set_read_timeout(60);
  auto res = client.Get(path);
  if (!res) {
    throw NetworkError("GET " + url + ": " + httplib::to_string(res.error()));
  }
  if (res->status == 404) throw NotFound("GET " + url + ": 404 Not Found");
  if (res->status != 200) {
    throw NetworkError("GET " + url + ": HTTP " + std::to_string(res->status));
  }
  return std::move(res->body);
}

}  // namespace

std::string DefaultTransport::get(const std::string& location) {
  if (location.rfind("http://", 0) == 0 || location.rfind("https://", 0) == 0) {
    return http_get(location);
  }
  std::string path = location;
  if (path.rfind("file://", 0) == 0) {
    path = path.substr(7);
  } else if (is_url(path)) {
    throw NetworkError("unsupported URL scheme: " + location);
  }
  if (!std::filesystem::is_regular_file(path)) {
    throw NotFound("no such file: " + path);
  }
  return fsutil::read_file(path);
}

}  // namespace forgebox::imagestore
