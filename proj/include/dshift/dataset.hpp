#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dshift/tensor.hpp"

namespace dshift {

struct DatasetMeta {
    std::string source;
    std::string split;
    uint64_t seed = 0;
    std::vector<std::string> chain;  // provenance log: transforms and subset ops, in order

    std::string chain_string() const;
    static std::vector<std::string> parse_chain(const std::string& joined);
};

/// Labeled image collection. Images are N x C x H x W; loaders and the cube
/// generators produce pixels in [0, 1] that are exactly representable in
/// binary32, so cache round-trips reproduce them bit for bit. The spheres
/// generator is the one exception: its points live on spheres of the given
/// radii (coordinates outside [0, 1]) and keep full double precision.
struct Dataset {
    Tensor images;
    std::vector<int32_t> labels;
    int32_t num_classes = 0;
    DatasetMeta meta;

    int64_t size() const { return images.ndim() > 0 ? images.dim(0) : 0; }
    int64_t pixels_per_item() const { return size() > 0 ? images.numel() / size() : 0; }

    /// Throws if labels/shape/class-count are inconsistent.
    void validate() const;
    /// True when every pixel is inside [0, 1].
    bool in_unit_range() const;
};

enum class SyntheticKind { CubeHyperplaneE1, CubeHyperplaneOnes, Spheres };

std::string_view synthetic_kind_name(SyntheticKind k);
SyntheticKind parse_synthetic_kind(std::string_view name);

struct SyntheticSpec {
    SyntheticKind kind = SyntheticKind::CubeHyperplaneE1;
    int64_t dim = 2;
    int64_t count = 0;
    double inner_radius = 1.0;  // spheres only
    double outer_radius = 1.3;  // spheres only
    uint64_t seed = 0;

    void validate() const;
};

/// IDX (big-endian) reader for the MNIST family. Pixels are scaled to [0, 1]
/// by division by 255.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// CIFAR-10 binary batches: records of 1 label byte + 3072 channel-major
/// pixel bytes, shape 3 x 32 x 32.
Dataset load_cifar_binary(const std::vector<std::filesystem::path>& batch_paths);

/// Synthetic data. Cube kinds draw x ~ Uniform[0,1]^d and label by the
/// hyperplane stated in the spec kind; spheres draws equal counts uniformly
/// on two concentric spheres (inner = class 0, outer = class 1).
Dataset gen_synthetic(const SyntheticSpec& spec);

/// Deterministic subset. Stratified mode draws floor(n/k) or ceil(n/k) per
/// class (lower class ids take the remainder).
Dataset subset(const Dataset& ds, int64_t n, bool stratified, uint64_t seed);

/// Binary dataset cache. Pixels are stored as f32; save -> load -> save is
/// byte-identical, and loaded pixels equal float(original pixel).
void save_cache(const Dataset& ds, const std::filesystem::path& path);
Dataset load_cache(const std::filesystem::path& path);

}  // namespace dshift
