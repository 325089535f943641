#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "sdtn/data.hpp"
#include "sdtn/error.hpp"

namespace sdtn::data {

namespace {

constexpr char kMagic[4] = {'S', 'D', 'T', 'I'};

void put_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* b) {
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

}  // namespace

RgbImage make_image(int width, int height, std::array<std::uint8_t, 3> fill) {
    if (width <= 0 || height <= 0) throw ContractError("image dimensions must be positive");
    RgbImage img{width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height * 3)};
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = fill[i % 3];
    return img;
}

void save_image(const std::filesystem::path& path, const RgbImage& image) {
    if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * 3)
        throw ContractError("image pixel buffer does not match its dimensions");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot write image " + path.string());
    f.write(kMagic, 4);
    put_u32(f, static_cast<std::uint32_t>(image.width));
    put_u32(f, static_cast<std::uint32_t>(image.height));
    f.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (!f) throw FormatError("failed writing image " + path.string());
}

RgbImage read_image(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open image " + path.string());
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError(path.string() + ": not an SDTI image (bad magic)");
    const std::uint32_t w = get_u32(bytes.data() + 4), h = get_u32(bytes.data() + 8);
    if (w == 0 || h == 0 || w > 65536 || h > 65536) throw FormatError(path.string() + ": implausible image dimensions");
    const std::size_t need = static_cast<std::size_t>(w) * h * 3;
    if (bytes.size() - 12 < need) throw FormatError(path.string() + ": truncated pixel data");
    if (bytes.size() - 12 > need) throw FormatError(path.string() + ": trailing bytes after pixel data");
    RgbImage img{static_cast<int>(w), static_cast<int>(h), std::vector<std::uint8_t>(bytes.begin() + 12, bytes.end())};
    return img;
}

Tensor image_to_tensor(const RgbImage& image, Precision p) {
    const int w = image.width, h = image.height;
    std::vector<double> v(static_cast<std::size_t>(3) * w * h);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                v[(static_cast<std::size_t>(c) * h + y) * w + x] = image.at(x, y, c) / 255.0;
    return Tensor::from_values({1, 3, h, w}, v, p);
}

Tensor load_image(const std::filesystem::path& path, Precision p) {
    return image_to_tensor(read_image(path), p);
}

RgbImage tensor_to_image(const Tensor& t) {
    const Shape& s = t.shape();
    if (s.n != 1 || s.c != 3) throw ShapeError("tensor_to_image expects (1, 3, H, W), got " + s.str());
    RgbImage img = make_image(s.w, s.h);
    const std::vector<double> v = t.to_vector();
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w; ++x)
                img.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v[s.offset(0, c, y, x)] * 255.0), 0L, 255L));
    return img;
}

Box Affine::forward(const Box& b) const {
    return {b.x1 * scale + pad_x, b.y1 * scale + pad_y, b.x2 * scale + pad_x, b.y2 * scale + pad_y};
}

Box Affine::inverse(const Box& b) const {
    return {(b.x1 - pad_x) / scale, (b.y1 - pad_y) / scale, (b.x2 - pad_x) / scale, (b.y2 - pad_y) / scale};
}

Letterboxed letterbox(const Tensor& image, int target) {
    const Shape& s = image.shape();
    if (s.n != 1 || s.c != 3) throw ShapeError("letterbox expects (1, 3, H, W), got " + s.str());
    if (target <= 0) throw ContractError("letterbox target must be positive");
    if (s.w == target && s.h == target) return {image.detach(), Affine{}};

    const double scale = std::min(static_cast<double>(target) / s.w, static_cast<double>(target) / s.h);
    const int nw = std::clamp(static_cast<int>(std::lround(s.w * scale)), 1, target);
    const int nh = std::clamp(static_cast<int>(std::lround(s.h * scale)), 1, target);
    const int px = (target - nw) / 2, py = (target - nh) / 2;

    const std::vector<double> src = image.to_vector();
    std::vector<double> dst(static_cast<std::size_t>(3) * target * target, 0.5);
    for (int y = 0; y < nh; ++y) {
        const double sy = std::clamp((y + 0.5) / scale - 0.5, 0.0, s.h - 1.0);
        const int y0 = static_cast<int>(sy), y1 = std::min(y0 + 1, s.h - 1);
        const double fy = sy - y0;
        for (int x = 0; x < nw; ++x) {
            const double sx = std::clamp((x + 0.5) / scale - 0.5, 0.0, s.w - 1.0);
            const int x0 = static_cast<int>(sx), x1 = std::min(x0 + 1, s.w - 1);
            const double fx = sx - x0;
            for (int c = 0; c < 3; ++c) {
                auto at = [&](int yy, int xx) { return src[s.offset(0, c, yy, xx)]; };
                const double top = at(y0, x0) * (1 - fx) + at(y0, x1) * fx;
                const double bottom = at(y1, x0) * (1 - fx) + at(y1, x1) * fx;
                dst[(static_cast<std::size_t>(c) * target + y + py) * target + x + px] = top * (1 - fy) + bottom * fy;
            }
        }
    }
    return {Tensor::from_values({1, 3, target, target}, dst, image.precision()), Affine{scale, double(px), double(py)}};
}

}  // namespace sdtn::data
