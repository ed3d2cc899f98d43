#include "dshift/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "dshift/rng.hpp"

namespace dshift {

namespace {

constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;
constexpr char kCacheMagic[4] = {'D', 'S', 'N', 'C'};
constexpr uint32_t kCacheVersion = 1;

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

uint32_t read_be32(const unsigned char* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

// Pixel bytes widen to the exact binary32 value of k/255 so that cached
// copies reproduce in-memory pixels bit for bit.
double byte_to_unit(unsigned char b) { return static_cast<double>(static_cast<float>(b) / 255.0f); }

struct Writer {
    std::ofstream out;
    explicit Writer(const std::filesystem::path& p) : out(p, std::ios::binary) {
        if (!out) throw std::runtime_error("cannot open file for writing: " + p.string());
    }
    void bytes(const void* p, size_t n) { out.write(static_cast<const char*>(p), std::streamsize(n)); }
    template <class T>
    void pod(T v) {
        bytes(&v, sizeof(T));
    }
};

struct Reader {
    std::vector<unsigned char> buf;
    size_t pos = 0;
    explicit Reader(const std::filesystem::path& p) : buf(read_file_bytes(p)) {}
    void bytes(void* p, size_t n) {
        if (pos + n > buf.size()) throw std::runtime_error("cache file truncated");
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    template <class T>
    T pod() {
        T v;
        bytes(&v, sizeof(T));
        return v;
    }
};

}  // namespace

std::string DatasetMeta::chain_string() const {
    std::string out;
    for (size_t i = 0; i < chain.size(); ++i) {
        if (i) out += ";";
        out += chain[i];
    }
    return out;
}

std::vector<std::string> DatasetMeta::parse_chain(const std::string& joined) {
    std::vector<std::string> out;
    std::string cur;
    std::stringstream ss(joined);
    while (std::getline(ss, cur, ';'))
        if (!cur.empty()) out.push_back(cur);
    return out;
}

void Dataset::validate() const {
    if (images.ndim() != 4) throw std::invalid_argument("dataset: images must be N x C x H x W");
    if (images.dim(0) != static_cast<int64_t>(labels.size()))
        throw std::invalid_argument("dataset: image count does not match label count");
    if (num_classes < 1) throw std::invalid_argument("dataset: num_classes must be >= 1");
    for (int32_t y : labels)
        if (y < 0 || y >= num_classes) throw std::invalid_argument("dataset: label out of range");
}

bool Dataset::in_unit_range() const {
    for (double v : images.data)
        if (!(v >= 0.0 && v <= 1.0)) return false;
    return true;
}

std::string_view synthetic_kind_name(SyntheticKind k) {
    switch (k) {
        case SyntheticKind::CubeHyperplaneE1: return "cube-hyperplane-e1";
        case SyntheticKind::CubeHyperplaneOnes: return "cube-hyperplane-ones";
        case SyntheticKind::Spheres: return "spheres";
    }
    return "unknown";
}

SyntheticKind parse_synthetic_kind(std::string_view name) {
    if (name == "cube-hyperplane-e1") return SyntheticKind::CubeHyperplaneE1;
    if (name == "cube-hyperplane-ones") return SyntheticKind::CubeHyperplaneOnes;
    if (name == "spheres") return SyntheticKind::Spheres;
    throw std::invalid_argument("unknown synthetic kind: " + std::string(name));
}

void SyntheticSpec::validate() const {
    if (dim < 1) throw std::invalid_argument("synthetic: dim must be >= 1");
    if (count < 1) throw std::invalid_argument("synthetic: count must be >= 1");
    if (kind == SyntheticKind::Spheres && !(0.0 < inner_radius && inner_radius < outer_radius))
        throw std::invalid_argument("synthetic: spheres require 0 < inner_radius < outer_radius");
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    auto img = read_file_bytes(images_path);
    auto lab = read_file_bytes(labels_path);
    if (img.size() < 16) throw std::runtime_error("idx: image file too short: " + images_path.string());
    if (lab.size() < 8) throw std::runtime_error("idx: label file too short: " + labels_path.string());

    uint32_t img_magic = read_be32(img.data());
    if (img_magic != kIdxImagesMagic)
        throw std::runtime_error("idx: bad image magic in " + images_path.string());
    uint32_t lab_magic = read_be32(lab.data());
    if (lab_magic != kIdxLabelsMagic)
        throw std::runtime_error("idx: bad label magic in " + labels_path.string());

    int64_t n = read_be32(img.data() + 4);
    int64_t h = read_be32(img.data() + 8);
    int64_t w = read_be32(img.data() + 12);
    int64_t n_lab = read_be32(lab.data() + 4);
    if (n != n_lab) throw std::runtime_error("idx: image/label counts differ");
    if (img.size() != size_t(16 + n * h * w)) throw std::runtime_error("idx: truncated image payload");
    if (lab.size() != size_t(8 + n)) throw std::runtime_error("idx: truncated label payload");

    Dataset ds;
    ds.images = Tensor({n, 1, h, w});
    for (int64_t i = 0; i < n * h * w; ++i) ds.images.data[size_t(i)] = byte_to_unit(img[size_t(16 + i)]);
    ds.labels.resize(size_t(n));
    int32_t max_label = 0;
    for (int64_t i = 0; i < n; ++i) {
        ds.labels[size_t(i)] = lab[size_t(8 + i)];
        max_label = std::max(max_label, ds.labels[size_t(i)]);
    }
    ds.num_classes = std::max(10, max_label + 1);
    ds.meta.source = images_path.filename().string();
    ds.validate();
    return ds;
}

Dataset load_cifar_binary(const std::vector<std::filesystem::path>& batch_paths) {
    constexpr int64_t kRecord = 3073;
    constexpr int64_t kPixels = 3072;
    std::vector<unsigned char> all;
    for (const auto& p : batch_paths) {
        auto b = read_file_bytes(p);
        if (b.empty() || b.size() % kRecord != 0)
            throw std::runtime_error("cifar: file size not a multiple of 3073: " + p.string());
        all.insert(all.end(), b.begin(), b.end());
    }
    int64_t n = int64_t(all.size()) / kRecord;
    Dataset ds;
    ds.images = Tensor({n, 3, 32, 32});
    ds.labels.resize(size_t(n));
    for (int64_t i = 0; i < n; ++i) {
        const unsigned char* rec = all.data() + i * kRecord;
        ds.labels[size_t(i)] = rec[0];
        for (int64_t j = 0; j < kPixels; ++j)
            ds.images.data[size_t(i * kPixels + j)] = byte_to_unit(rec[1 + j]);
    }
    ds.num_classes = 10;
    ds.meta.source = "cifar10";
    ds.validate();
    return ds;
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    Dataset ds;
    ds.images = Tensor({spec.count, 1, 1, spec.dim});
    ds.labels.resize(size_t(spec.count));
    ds.num_classes = 2;
    ds.meta.source = std::string("synthetic:") + std::string(synthetic_kind_name(spec.kind));
    ds.meta.seed = spec.seed;

    double* out = ds.images.ptr();
    if (spec.kind == SyntheticKind::Spheres) {
        // Uniform on the sphere via normalized Gaussian vectors. Coordinates
        // stay double precision so norms hold to ~1e-12.
        int64_t n_inner = spec.count - spec.count / 2;
        for (int64_t i = 0; i < spec.count; ++i) {
            double* x = out + i * spec.dim;
            double norm2 = 0.0;
            for (int64_t j = 0; j < spec.dim; ++j) {
                x[j] = rng.normal();
                norm2 += x[j] * x[j];
            }
            double r = (i < n_inner) ? spec.inner_radius : spec.outer_radius;
            double scale = r / std::sqrt(norm2);
            for (int64_t j = 0; j < spec.dim; ++j) x[j] *= scale;
            ds.labels[size_t(i)] = (i < n_inner) ? 0 : 1;
        }
        return ds;
    }

    for (int64_t i = 0; i < spec.count; ++i) {
        double* x = out + i * spec.dim;
        for (int64_t j = 0; j < spec.dim; ++j)
            x[j] = static_cast<double>(static_cast<float>(rng.uniform01()));
        // Labels come from the stored (binary32-rounded) coordinates so the
        // labeling rule holds exactly on what the dataset contains.
        if (spec.kind == SyntheticKind::CubeHyperplaneE1) {
            ds.labels[size_t(i)] = x[0] > 0.5 ? 1 : 0;
        } else {
            double s = 0.0;
            for (int64_t j = 0; j < spec.dim; ++j) s += x[j];
            ds.labels[size_t(i)] = s > static_cast<double>(spec.dim) / 2.0 ? 1 : 0;
        }
    }
    return ds;
}

Dataset subset(const Dataset& ds, int64_t n, bool stratified, uint64_t seed) {
    ds.validate();
    const int64_t total = ds.size();
    if (n < 1 || n > total) throw std::invalid_argument("subset: n must be in [1, dataset size]");

    Rng rng(seed);
    std::vector<int64_t> picked;
    picked.reserve(size_t(n));
    if (stratified) {
        const int64_t k = ds.num_classes;
        std::vector<std::vector<int64_t>> by_class(size_t(k));
        for (int64_t i = 0; i < total; ++i) by_class[size_t(ds.labels[size_t(i)])].push_back(i);
        const int64_t base = n / k;
        const int64_t extra = n % k;
        for (int64_t c = 0; c < k; ++c) {
            int64_t want = base + (c < extra ? 1 : 0);
            auto& idx = by_class[size_t(c)];
            if (want > static_cast<int64_t>(idx.size()))
                throw std::invalid_argument("subset: class " + std::to_string(c) +
                                            " has too few examples for stratified draw");
            rng.shuffle(idx);
            picked.insert(picked.end(), idx.begin(), idx.begin() + want);
        }
        rng.shuffle(picked);
    } else {
        std::vector<int64_t> perm(size_t(total));
        for (int64_t i = 0; i < total; ++i) perm[size_t(i)] = i;
        rng.shuffle(perm);
        picked.assign(perm.begin(), perm.begin() + n);
    }

    const int64_t d = ds.pixels_per_item();
    Dataset out;
    out.images = Tensor({n, ds.images.dim(1), ds.images.dim(2), ds.images.dim(3)});
    out.labels.resize(size_t(n));
    for (int64_t i = 0; i < n; ++i) {
        std::memcpy(out.images.ptr() + i * d, ds.images.ptr() + picked[size_t(i)] * d,
                    size_t(d) * sizeof(double));
        out.labels[size_t(i)] = ds.labels[size_t(picked[size_t(i)])];
    }
    out.num_classes = ds.num_classes;
    out.meta = ds.meta;
    out.meta.chain.push_back("subset(n=" + std::to_string(n) +
                             ",stratified=" + (stratified ? "1" : "0") +
                             ",seed=" + std::to_string(seed) + ")");
    return out;
}

void save_cache(const Dataset& ds, const std::filesystem::path& path) {
    ds.validate();
    Writer w(path);
    w.bytes(kCacheMagic, 4);
    w.pod<uint32_t>(kCacheVersion);
    w.pod<uint32_t>(uint32_t(ds.images.ndim()));
    for (int64_t d : ds.images.shape) w.pod<int64_t>(d);
    w.pod<int64_t>(ds.size());
    for (int32_t y : ds.labels) w.pod<int32_t>(y);
    w.pod<int32_t>(ds.num_classes);

    std::string meta = "source=" + ds.meta.source + "\n" + "split=" + ds.meta.split + "\n" +
                       "seed=" + std::to_string(ds.meta.seed) + "\n" +
                       "chain=" + ds.meta.chain_string() + "\n";
    w.pod<uint64_t>(meta.size());
    w.bytes(meta.data(), meta.size());

    for (double v : ds.images.data) w.pod<float>(static_cast<float>(v));
    if (!w.out) throw std::runtime_error("cache write failed: " + path.string());
}

Dataset load_cache(const std::filesystem::path& path) {
    Reader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kCacheMagic, 4) != 0)
        throw std::runtime_error("cache: bad magic in " + path.string());
    uint32_t version = r.pod<uint32_t>();
    if (version != kCacheVersion)
        throw std::runtime_error("cache: unsupported version " + std::to_string(version));
    uint32_t ndim = r.pod<uint32_t>();
    if (ndim != 4) throw std::runtime_error("cache: corrupted header (ndim)");
    std::vector<int64_t> shape(ndim);
    for (auto& d : shape) {
        d = r.pod<int64_t>();
        if (d <= 0 || d > (int64_t(1) << 32)) throw std::runtime_error("cache: corrupted header (dim)");
    }
    int64_t n_labels = r.pod<int64_t>();
    if (n_labels != shape[0]) throw std::runtime_error("cache: corrupted header (label count)");

    Dataset ds;
    ds.labels.resize(size_t(n_labels));
    for (auto& y : ds.labels) y = r.pod<int32_t>();
    ds.num_classes = r.pod<int32_t>();

    uint64_t meta_len = r.pod<uint64_t>();
    std::string meta(meta_len, '\0');
    r.bytes(meta.data(), meta_len);
    std::map<std::string, std::string> kv;
    std::stringstream ss(meta);
    std::string line;
    while (std::getline(ss, line)) {
        auto eq = line.find('=');
        if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    ds.meta.source = kv["source"];
    ds.meta.split = kv["split"];
    ds.meta.seed = kv.count("seed") ? std::stoull(kv["seed"]) : 0;
    ds.meta.chain = DatasetMeta::parse_chain(kv["chain"]);

    ds.images = Tensor(shape);
    for (double& v : ds.images.data) v = static_cast<double>(r.pod<float>());
    if (r.pos != r.buf.size()) throw std::runtime_error("cache: trailing bytes in " + path.string());
    ds.validate();
    return ds;
}

}  // namespace dshift
