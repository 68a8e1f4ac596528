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

#ifndef GCREC_HTTP_TRANSPORT_HPP_
#define GCREC_HTTP_TRANSPORT_HPP_

#include <chrono>
#include <string>
#include <utility>
#include <vector>

namespace gcrec {

struct HttpResponse {
  int status = 0;  // 0 means the request never completed
  std::string body;
  std::string error;
};

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;

// JSON-over-HTTP POST. Swappable so backends can be tested without a network.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse PostJson(const std::string& url, const std::string& body,
                                const HttpHeaders& headers) = 0;
};

class HttplibTransport final : public HttpTransport {
 public:
  explicit HttplibTransport(std::chrono::seconds timeout = std::chrono::seconds(120))
      : timeout_(timeout) {}
  HttpResponse PostJson(const std::string& url, const std::string& body,
                        const HttpHeaders& headers) override;

 private:
  std::chrono::seconds timeout_;
};

}  // namespace gcrec

#endif  // GCREC_HTTP_TRANSPORT_HPP_
