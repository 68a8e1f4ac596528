// Copyright 2026 The gcrec Authors.
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

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "gcrec/http_transport.hpp"

#include <httplib.h>

namespace gcrec {

HttpResponse HttplibTransport::PostJson(const std::string& url,
                                        const std::string& body,
                                        const HttpHeaders& headers) {
  HttpResponse out;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    out.error = "endpoint must be an absolute http(s) URL: " + url;
    return out;
  }
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string base = url.substr(0, path_start);
  const std::string path =
      path_start == std::string::npos ? "/" : url.substr(path_start);

  httplib::Client client(base);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_write_timeout(timeout_);
  httplib::Headers h;
  for (const auto& [k, v] : headers) h.emplace(k, v);

  auto res = client.Post(path, h, body, "application/json");
  if (!res) {
    out.error = httplib::to_string(res.error());
    return out;
  }
  out.status = res->status;
  out.body = res->body;
  return out;
}

}  // namespace gcrec
