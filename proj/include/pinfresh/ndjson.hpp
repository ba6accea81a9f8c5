#pragma once

#include <functional>
#include <istream>
#include <stdexcept>
#include <string>

#include <json.hpp>

namespace pinfresh {

class MalformedRecord : public std::runtime_error {
public:
    MalformedRecord(std::size_t line, const std::string& reason)
        : std::runtime_error("line " + std::to_string(line) + ": " + reason),
          line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

namespace ndjson {

/// Iterate newline-delimited JSON objects; blank lines are skipped.
/// The callback receives the 1-based line number and the parsed object.
inline void for_each(std::istream& in,
                     const std::function<void(std::size_t, const nlohmann::json&)>& fn) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw MalformedRecord(line_no, e.what());
        }
        if (!obj.is_object())
            throw MalformedRecord(line_no, "expected a JSON object");
        fn(line_no, obj);
    }
}

inline std::string require_string(std::size_t line, const nlohmann::json& obj,
                                  const char* key) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string())
        throw MalformedRecord(line, std::string("missing or non-string field \"") + key + '"');
    return it->get<std::string>();
}

} // namespace ndjson
} // namespace pinfresh
