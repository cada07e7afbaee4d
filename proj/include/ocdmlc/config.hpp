#pragma once

#include <filesystem>
#include <sstream>
#include <stdexcept>
#include <string>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace ocdmlc {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// key=value file with [section] headers ([model], [train], [synth], [data]).
class ConfigFile {
public:
    ConfigFile() = default;

    static ConfigFile parse(const std::string& text) {
        ConfigFile c;
        std::istringstream in(text);
        try {
            boost::property_tree::read_ini(in, c.tree_);
        } catch (const boost::property_tree::ini_parser_error& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
        return c;
    }

    static ConfigFile load(const std::filesystem::path& path) {
        ConfigFile c;
        try {
            boost::property_tree::read_ini(path.string(), c.tree_);
        } catch (const boost::property_tree::ini_parser_error& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
        return c;
    }

    bool has(const std::string& section, const std::string& key) const {
        return static_cast<bool>(tree_.get_optional<std::string>(section + "." + key));
    }

    template <class T>
    T get(const std::string& section, const std::string& key, const T& fallback) const {
        if (!has(section, key)) return fallback;
        try {
            return tree_.get<T>(section + "." + key);
        } catch (const boost::property_tree::ptree_bad_data&) {
            throw ConfigError("config: bad value for " + section + "." + key);
        }
    }

    void set(const std::string& section, const std::string& key, const std::string& value) {
        tree_.put(section + "." + key, value);
    }

    std::string dump() const {
        std::ostringstream os;
        boost::property_tree::write_ini(os, tree_);
        return os.str();
    }

private:
    boost::property_tree::ptree tree_;
};

}  // namespace ocdmlc
