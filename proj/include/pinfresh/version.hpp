#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pinfresh {

class UnparseableVersion : public std::runtime_error {
public:
    explicit UnparseableVersion(const std::string& text)
        : std::runtime_error("unparseable version: \"" + text + "\"") {}
};

/// Parsed major.minor.patch[-tag] version.
///
/// Ordering compares (major, minor, patch) numerically left to right.
/// The tag is only a tie-break between otherwise-equal versions, with an
/// absent tag ordered greatest ("1.0.0" > "1.0.0-rc1").
struct Version {
    std::int64_t major = 0;
    std::int64_t minor = 0;
    std::int64_t patch = 0;
    std::optional<std::string> tag;

    friend std::strong_ordering operator<=>(const Version& a, const Version& b) {
        if (auto c = a.major <=> b.major; c != 0) return c;
        if (auto c = a.minor <=> b.minor; c != 0) return c;
        if (auto c = a.patch <=> b.patch; c != 0) return c;
        // tie-break: untagged sorts above any tagged version
        if (!a.tag && !b.tag) return std::strong_ordering::equal;
        if (!a.tag) return std::strong_ordering::greater;
        if (!b.tag) return std::strong_ordering::less;
        return *a.tag <=> *b.tag;
    }
    friend bool operator==(const Version& a, const Version& b) {
        return (a <=> b) == 0;
    }
};

inline std::string render(const Version& v) {
    std::string out = std::to_string(v.major) + '.' + std::to_string(v.minor) +
                      '.' + std::to_string(v.patch);
    if (v.tag) {
        out += '-';
        out += *v.tag;
    }
    return out;
}

namespace detail {

inline bool all_digits(std::string_view s) {
    if (s.empty()) return false;
    for (char c : s)
        if (c < '0' || c > '9') return false;
    return true;
}

} // namespace detail

/// Parse "major[.minor[.patch]][-tag]"; missing minor/patch default to 0.
/// Returns nullopt when the text does not fit the scheme.
inline std::optional<Version> try_parse_version(std::string_view text) {
    if (text.empty()) return std::nullopt;

    Version v;
    std::string_view numeric = text;
    if (auto dash = text.find('-'); dash != std::string_view::npos) {
        numeric = text.substr(0, dash);
        std::string_view tag = text.substr(dash + 1);
        if (tag.empty()) return std::nullopt;
        v.tag = std::string(tag);
    }

    std::int64_t* slots[3] = {&v.major, &v.minor, &v.patch};
    std::size_t slot = 0;
    while (!numeric.empty()) {
        if (slot >= 3) return std::nullopt;
        auto dot = numeric.find('.');
        std::string_view part = numeric.substr(0, dot);
        if (!detail::all_digits(part) || part.size() > 18) return std::nullopt;
        *slots[slot++] = std::stoll(std::string(part));
        if (dot == std::string_view::npos) break;
        numeric.remove_prefix(dot + 1);
        if (numeric.empty()) return std::nullopt; // trailing dot
    }
    if (slot == 0) return std::nullopt;
    return v;
}

inline Version parse_version(std::string_view text) {
    auto v = try_parse_version(text);
    if (!v) throw UnparseableVersion(std::string(text));
    return *v;
}

/// True iff `to` is a semver-compatible upgrade from `from`:
/// same major version and strictly newer.
inline bool is_semver_compatible(const Version& from, const Version& to) {
    return to.major == from.major && to > from;
}

} // namespace pinfresh
