#include "agynlite/http.hpp"

#include <algorithm>
#include <cctype>

namespace agynlite {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string HttpRequest::header(std::string_view name) const {
    auto it = headers.find(lower(name));
    return it == headers.end() ? std::string{} : it->second;
}

void HttpRequest::set_header(std::string_view name, std::string value) {
    headers[lower(name)] = std::move(value);
}

} // namespace agynlite
