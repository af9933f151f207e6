#pragma once

#include <set>
#include <stdexcept>
#include <string>
#include <utility>

#include <json.hpp>

namespace unida {

using Json = nlohmann::ordered_json;

/// Invalid configuration value or shape. `field()` is the dotted path.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(std::string field, const std::string& message)
        : std::invalid_argument("config field '" + field + "': " + message), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

/// Reads an object with explicit defaults and rejects keys nobody asked for.
class StrictObject {
public:
    StrictObject(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    bool has(const std::string& key) const { return obj_.contains(key); }

    template <class T>
    T get(const std::string& key, const T& fallback) {
        seen_.insert(key);
        if (!obj_.contains(key)) return fallback;
        try {
            return obj_.at(key).template get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(field(key), std::string("wrong type (") + e.what() + ")");
        }
    }

    template <class T>
    T require(const std::string& key) {
        seen_.insert(key);
        if (!obj_.contains(key)) throw ConfigError(field(key), "missing required field");
        try {
            return obj_.at(key).template get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(field(key), std::string("wrong type (") + e.what() + ")");
        }
    }

    /// Sub-object, or an empty object when absent.
    StrictObject child(const std::string& key) {
        seen_.insert(key);
        if (!obj_.contains(key)) return StrictObject(empty(), field(key));
        return StrictObject(obj_.at(key), field(key));
    }

    void finish() const {
        for (auto it = obj_.begin(); it != obj_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(field(it.key()), "unknown key");
    }

private:
    static const Json& empty() {
        static const Json e = Json::object();
        return e;
    }

    const Json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

}  // namespace unida
