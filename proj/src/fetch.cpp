#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "dshift/fetch.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <httplib.h>

namespace dshift {

std::vector<FetchItem> parse_fetch_list(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open fetch list: " + path.string());
    std::vector<FetchItem> items;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        FetchItem item;
        if (!(ss >> item.name)) continue;  // blank line
        if (!(ss >> item.url >> item.sha256))
            throw std::invalid_argument("fetch list " + path.string() + ":" + std::to_string(lineno) +
                                        ": expected 'name url sha256'");
        std::string extra;
        if (ss >> extra)
            throw std::invalid_argument("fetch list " + path.string() + ":" + std::to_string(lineno) +
                                        ": trailing tokens");
        items.push_back(std::move(item));
    }
    return items;
}

std::string sha256_hex(const void* data, size_t size) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, data, size) != 1 || EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("sha256 computation failed");
    }
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return sha256_hex(bytes.data(), bytes.size());
}

std::vector<unsigned char> gunzip(const std::vector<unsigned char>& compressed) {
    z_stream strm{};
    if (inflateInit2(&strm, 16 + MAX_WBITS) != Z_OK) throw std::runtime_error("gunzip: init failed");
    std::vector<unsigned char> out;
    std::vector<unsigned char> buf(1 << 16);
    strm.next_in = const_cast<unsigned char*>(compressed.data());
    strm.avail_in = uInt(compressed.size());
    int ret = Z_OK;
    while (ret != Z_STREAM_END) {
        strm.next_out = buf.data();
        strm.avail_out = uInt(buf.size());
        ret = inflate(&strm, Z_NO_FLUSH);
        if (ret != Z_OK && ret != Z_STREAM_END) {
            inflateEnd(&strm);
            throw std::runtime_error("gunzip: corrupt stream");
        }
        out.insert(out.end(), buf.data(), buf.data() + (buf.size() - strm.avail_out));
    }
    inflateEnd(&strm);
    return out;
}

namespace {

struct ParsedUrl {
    std::string scheme_host;  // e.g. "http://host:8080"
    std::string path;
    std::string basename;
};

ParsedUrl parse_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw std::invalid_argument("fetch: bad url: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    ParsedUrl p;
    if (path_start == std::string::npos) {
        p.scheme_host = url;
        p.path = "/";
    } else {
        p.scheme_host = url.substr(0, path_start);
        p.path = url.substr(path_start);
    }
    auto slash = p.path.rfind('/');
    p.basename = p.path.substr(slash + 1);
    if (p.basename.empty()) throw std::invalid_argument("fetch: url has no filename: " + url);
    return p;
}

}  // namespace

std::filesystem::path fetch(const FetchItem& item, const std::filesystem::path& dest_dir) {
    ParsedUrl url = parse_url(item.url);
    const bool gzipped = url.basename.size() > 3 && url.basename.ends_with(".gz");
    std::string final_name = gzipped ? url.basename.substr(0, url.basename.size() - 3) : url.basename;

    std::filesystem::create_directories(dest_dir);
    std::filesystem::path final_path = dest_dir / final_name;
    std::filesystem::path info_path = dest_dir / (final_name + ".fetchinfo");

    if (std::filesystem::exists(final_path) && std::filesystem::exists(info_path)) {
        std::ifstream info(info_path);
        std::string line;
        std::getline(info, line);
        if (line == "sha256=" + item.sha256) return final_path;
    }

    httplib::Client client(url.scheme_host);
    client.set_follow_location(true);
    client.set_read_timeout(120, 0);
    auto res = client.Get(url.path);
    if (!res) throw std::runtime_error("fetch: request failed for " + item.url);
    if (res->status != 200)
        throw std::runtime_error("fetch: http status " + std::to_string(res->status) + " for " +
                                 item.url);

    std::string got = sha256_hex(res->body.data(), res->body.size());
    if (got != item.sha256)
        throw std::runtime_error("fetch: checksum mismatch for " + item.name + " (expected " +
                                 item.sha256 + ", got " + got + "); not caching");

    std::vector<unsigned char> payload(res->body.begin(), res->body.end());
    if (gzipped) payload = gunzip(payload);

    std::ofstream out(final_path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(payload.data()), std::streamsize(payload.size()));
    if (!out) throw std::runtime_error("fetch: cannot write " + final_path.string());
    out.close();
    std::ofstream info(info_path);
    info << "sha256=" << item.sha256 << "\n" << "url=" << item.url << "\n";
    return final_path;
}

}  // namespace dshift
