#pragma once

#include <functional>
#include <map>
#include <string>
#include <string_view>

namespace agynlite {

// Header names are stored lower-cased.
using HeaderMap = std::map<std::string, std::string>;

std::string lower(std::string_view s);

struct HttpRequest {
    std::string method;
    std::string path;
    HeaderMap headers;
    std::string body;
    std::map<std::string, std::string> query;

    std::string header(std::string_view name) const;
    void set_header(std::string_view name, std::string value);
};

// Sink for streamed responses; returns false once the reader went away.
using StreamSink = std::function<bool(std::string_view chunk)>;

struct HttpResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
    // Set for streaming routes (SSE). Runs until the sink refuses data.
    std::function<void(const StreamSink&)> stream;
};

// Anything that answers platform API calls: the gateway itself, an HTTP
// client pointed at it, or a workload's network proxy.
class ApiTransport {
public:
    virtual ~ApiTransport() = default;
    virtual HttpResponse call(const HttpRequest& request) = 0;
};

} // namespace agynlite
