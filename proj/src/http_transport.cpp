#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "geoloc/transport.hpp"

namespace geoloc {

HttpResponse HttpTransport::send(const HttpRequest& request) {
  httplib::Client client(request.origin());
  const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(request.timeout);
  const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(request.timeout - seconds);
  client.set_connection_timeout(seconds.count(), micros.count());
  client.set_read_timeout(seconds.count(), micros.count());
  client.set_write_timeout(seconds.count(), micros.count());

  httplib::Headers headers;
  std::string content_type = "application/json";
  for (const auto& [name, value] : request.headers) {
    if (httplib::detail::compare_case_ignore(name, "Content-Type")) {
      content_type = value;
    } else {
      headers.emplace(name, value);
    }
  }

  httplib::Result result = request.method == "GET"
                               ? client.Get(request.target(), headers)
                               : client.Post(request.target(), headers, request.body, content_type);
  if (!result) {
    const httplib::Error error = result.error();
    const auto kind = (error == httplib::Error::ConnectionTimeout || error == httplib::Error::Read)
                          ? TransportError::Kind::Timeout
                          : TransportError::Kind::Connection;
    throw TransportError(kind, request.method + " " + request.url + ": " + httplib::to_string(error));
  }
  return {result->status, result->body};
}

}  // namespace geoloc
