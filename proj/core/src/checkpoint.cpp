#include "advloop/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "advloop/rng.hpp"

namespace advloop::ckpt {

namespace fs = std::filesystem;
using nlohmann::json;

std::string payload_checksum(const json& payload) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(
                      rng::fnv1a64(payload.dump())));
    return buf;
}

void write_versioned(const fs::path& path, const std::string& kind,
                     const json& payload) {
    const json envelope = {
        {"format", {{"major", kFormatMajor}, {"minor", kFormatMinor}}},
        {"kind", kind},
        {"checksum", payload_checksum(payload)},
        {"payload", payload}};
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out)
            throw std::runtime_error("checkpoint: cannot open " +
                                     tmp.string());
        out << envelope.dump(2) << "\n";
        if (!out)
            throw std::runtime_error("checkpoint: short write to " +
                                     tmp.string());
    }
    fs::rename(tmp, path);
}

json read_versioned(const fs::path& path, const std::string& kind) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("checkpoint: cannot open " + path.string());
    json envelope;
    try {
        in >> envelope;
    } catch (const json::parse_error& e) {
        throw std::runtime_error("checkpoint: " + path.string() +
                                 " is not valid JSON: " + e.what());
    }
    const int major = envelope.at("format").at("major").get<int>();
    if (major != kFormatMajor)
        throw std::runtime_error(
            "checkpoint: " + path.string() + " has format major " +
            std::to_string(major) + ", this build reads " +
            std::to_string(kFormatMajor));
    const std::string got_kind = envelope.at("kind").get<std::string>();
    if (got_kind != kind)
        throw std::runtime_error("checkpoint: " + path.string() + " holds '" +
                                 got_kind + "', expected '" + kind + "'");
    const json payload = envelope.at("payload");
    const std::string want = envelope.at("checksum").get<std::string>();
    const std::string have = payload_checksum(payload);
    if (want != have)
        throw std::runtime_error("checkpoint: " + path.string() +
                                 " checksum mismatch (stored " + want +
                                 ", computed " + have + "); file is corrupt");
    return payload;
}

} // namespace advloop::ckpt
