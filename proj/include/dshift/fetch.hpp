#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace dshift {

struct FetchItem {
    std::string name;
    std::string url;
    std::string sha256;  // lowercase hex of the file as served
};

/// Parses a fetch list: one "name url sha256" triple per line, '#' comments.
std::vector<FetchItem> parse_fetch_list(const std::filesystem::path& path);

std::string sha256_hex(const void* data, size_t size);
std::string sha256_file(const std::filesystem::path& path);

/// Downloads item.url into dest_dir, verifies the SHA-256 of the payload as
/// served, then strips a trailing .gz by decompressing. A mismatched checksum
/// leaves the destination untouched. Re-running with a matching file on disk
/// performs no download. Returns the path of the final (decompressed) file.
std::filesystem::path fetch(const FetchItem& item, const std::filesystem::path& dest_dir);

/// gzip-decompresses a byte buffer.
std::vector<unsigned char> gunzip(const std::vector<unsigned char>& compressed);

}  // namespace dshift
