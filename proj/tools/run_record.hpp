#pragma once

// RunRecord: run.json written next to every command's outputs, with SHA-256
// hashes of the artifacts.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include <openssl/evp.h>

#include <json.hpp>

namespace catnet::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline std::string sha256_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string() + " for hashing");
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("sha256: digest init failed");
    }
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream os;
    for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

inline std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

/// Every regular file under `out` except run.json, keyed by its relative path.
inline json artifact_hashes(const fs::path& out) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(out))
        if (e.is_regular_file() && fs::relative(e.path(), out) != "run.json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    json h = json::object();
    for (const auto& f : files) h[fs::relative(f, out).generic_string()] = sha256_file(f);
    return h;
}

struct RunRecord {
    std::string command;
    std::vector<std::string> argv;
    json config = json::object();
    std::uint64_t seed = 0;
    std::string started_at = utc_now();
    json extra = json::object();

    void write(const fs::path& out, const std::string& status, const std::string& error = "") const {
        fs::create_directories(out);
        json j{{"command", command},
               {"argv", argv},
               {"config", config},
               {"seed", seed},
               {"started_at", started_at},
               {"finished_at", utc_now()},
               {"status", status},
               {"out", fs::absolute(out).lexically_normal().string()},
               {"artifacts", artifact_hashes(out)}};
        if (!error.empty()) j["error"] = error;
        if (!extra.empty()) j["details"] = extra;
        std::ofstream f(out / "run.json");
        if (!f) throw std::runtime_error("cannot write " + (out / "run.json").string());
        f << j.dump(2) << '\n';
    }
};

}  // namespace catnet::cli
