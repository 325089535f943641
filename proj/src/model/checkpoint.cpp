#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "sdtn/model.hpp"

namespace sdtn {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'D', 'T', 'N'};
constexpr char kExtraTag[4] = {'T', 'R', 'S', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
public:
    template <class T>
    void pod(const T& v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }
    void raw(const void* data, std::size_t n) {
        const auto* p = static_cast<const char*>(data);
        bytes_.insert(bytes_.end(), p, p + n);
    }
    void values(const std::vector<double>& v) {
        pod<std::uint64_t>(v.size());
        raw(v.data(), v.size() * sizeof(double));
    }
    const std::vector<char>& bytes() const { return bytes_; }

private:
    std::vector<char> bytes_;
};

class Reader {
public:
    Reader(std::vector<char> bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}

    template <class T>
    T pod() {
        T v;
        take(&v, sizeof(T));
        return v;
    }
    void take(void* out, std::size_t n) {
        if (bytes_.size() - pos_ < n) throw FormatError(source_ + ": truncated checkpoint");
        std::memcpy(out, bytes_.data() + pos_, n);
        pos_ += n;
    }
    std::vector<double> values(std::size_t expected, const std::string& what) {
        const auto n = pod<std::uint64_t>();
        if (n != expected)
            throw FormatError(source_ + ": " + what + " has " + std::to_string(n) + " values, model expects " +
                              std::to_string(expected));
        std::vector<double> v(n);
        take(v.data(), n * sizeof(double));
        return v;
    }
    bool done() const { return pos_ == bytes_.size(); }
    const std::string& source() const { return source_; }

private:
    std::vector<char> bytes_;
    std::size_t pos_ = 0;
    std::string source_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, Model& model, std::span<const std::uint8_t> extra) {
    Writer w;
    w.raw(kMagic, 4);
    w.pod(kVersion);
    w.pod(config_digest(model.config()));
    w.pod(static_cast<std::uint32_t>(model.layers().size()));
    for (std::size_t i = 0; i < model.layers().size(); ++i) {
        const nn::StateList s = model.layer_state(i);
        w.pod(static_cast<std::uint32_t>(s.params.size()));
        for (const Tensor& t : s.params) w.values(t.to_vector());
        w.pod(static_cast<std::uint32_t>(s.buffers.size()));
        for (const std::vector<double>* b : s.buffers) w.values(*b);
    }
    if (!extra.empty()) {
        w.raw(kExtraTag, 4);
        w.pod<std::uint64_t>(extra.size());
        w.raw(extra.data(), extra.size());
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot write checkpoint " + path.string());
    f.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!f) throw FormatError("failed writing checkpoint " + path.string());
}

std::vector<std::uint8_t> load_checkpoint(const std::filesystem::path& path, Model& model) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open checkpoint " + path.string());
    Reader r(std::vector<char>(std::istreambuf_iterator<char>(f), {}), path.string());

    char magic[4];
    r.take(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError(r.source() + ": not a checkpoint (bad magic)");
    const auto version = r.pod<std::uint32_t>();
    if (version != kVersion) throw FormatError(r.source() + ": unsupported checkpoint version " + std::to_string(version));
    const auto digest = r.pod<std::uint64_t>();
    if (digest != config_digest(model.config()))
        throw FormatError(r.source() + ": checkpoint was written for a different model configuration");
    const auto layers = r.pod<std::uint32_t>();
    if (layers != model.layers().size()) throw FormatError(r.source() + ": layer count mismatch");

    // Stage everything first so a bad file leaves the model untouched.
    std::vector<std::pair<Tensor, std::vector<double>>> params;
    std::vector<std::pair<std::vector<double>*, std::vector<double>>> buffers;
    for (std::size_t i = 0; i < layers; ++i) {
        const nn::StateList s = model.layer_state(i);
        const std::string where = "layer " + std::to_string(i);
        if (r.pod<std::uint32_t>() != s.params.size()) throw FormatError(r.source() + ": " + where + " parameter count mismatch");
        for (const Tensor& t : s.params) params.emplace_back(t, r.values(t.numel(), where));
        if (r.pod<std::uint32_t>() != s.buffers.size()) throw FormatError(r.source() + ": " + where + " buffer count mismatch");
        for (std::vector<double>* b : s.buffers) buffers.emplace_back(b, r.values(b->size(), where));
    }
    std::vector<std::uint8_t> extra;
    if (!r.done()) {
        char tag[4];
        r.take(tag, 4);
        if (std::memcmp(tag, kExtraTag, 4) != 0) throw FormatError(r.source() + ": unknown trailing section");
        extra.resize(r.pod<std::uint64_t>());
        r.take(extra.data(), extra.size());
        if (!r.done()) throw FormatError(r.source() + ": trailing bytes after state section");
    }

    for (auto& [t, v] : params)
        for (std::size_t k = 0; k < v.size(); ++k) t.set(k, v[k]);
    for (auto& [b, v] : buffers) *b = std::move(v);
    return extra;
}

}  // namespace sdtn
