#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "sdtn/data.hpp"
#include "sdtn/error.hpp"

using namespace sdtn;
using namespace sdtn::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("sdtn_test_data_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

double box_iou(const Box& a, const Box& b) {
    const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    return iw * ih / (a.area() + b.area() - iw * ih);
}

}  // namespace

TEST(ImageFile, AllMaxIsOne) {
    const fs::path dir = scratch("max");
    save_image(dir / "a.sdti", make_image(2, 2, {255, 255, 255}));
    const Tensor t = load_image(dir / "a.sdti");
    EXPECT_EQ(t.shape(), (Shape{1, 3, 2, 2}));
    for (double v : t.to_vector()) EXPECT_EQ(v, 1.0);
}

TEST(ImageFile, RoundTripAndLayout) {
    const fs::path dir = scratch("rt");
    std::mt19937_64 rng(1);
    RgbImage img = make_image(7, 5);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() & 0xff);
    save_image(dir / "b.sdti", img);
    EXPECT_EQ(read_image(dir / "b.sdti"), img);
    EXPECT_EQ(fs::file_size(dir / "b.sdti"), 12u + 7 * 5 * 3);
    EXPECT_EQ(tensor_to_image(load_image(dir / "b.sdti")), img);

    // Header bytes: magic then little-endian width and height.
    std::ifstream f(dir / "b.sdti", std::ios::binary);
    char head[12];
    f.read(head, 12);
    EXPECT_EQ(std::string(head, 4), "SDTI");
    EXPECT_EQ(head[4], 7);
    EXPECT_EQ(head[8], 5);
    // Channel-first tensor: pixel (x=3, y=2) green channel.
    EXPECT_EQ(load_image(dir / "b.sdti").at(0, 1, 2, 3), img.at(3, 2, 1) / 255.0);
}

TEST(ImageFile, BadFilesAreFormatErrors) {
    const fs::path dir = scratch("bad");
    save_image(dir / "ok.sdti", make_image(4, 4));
    {
        std::fstream f(dir / "ok.sdti", std::ios::in | std::ios::out | std::ios::binary);
        f.write("XDTI", 4);
    }
    EXPECT_THROW(read_image(dir / "ok.sdti"), FormatError);
    save_image(dir / "short.sdti", make_image(4, 4));
    fs::resize_file(dir / "short.sdti", 20);
    EXPECT_THROW(read_image(dir / "short.sdti"), FormatError);
    EXPECT_THROW(read_image(dir / "missing.sdti"), FormatError);
}

TEST(Letterbox, IdentityForTargetSize) {
    std::mt19937_64 rng(2);
    std::vector<double> v(3 * 16 * 16);
    for (double& x : v) x = std::uniform_real_distribution<double>(0, 1)(rng);
    const Tensor img = Tensor::from_values({1, 3, 16, 16}, v);
    const Letterboxed lb = letterbox(img, 16);
    EXPECT_EQ(lb.image.to_vector(), v);
    EXPECT_EQ(lb.affine.scale, 1.0);
    EXPECT_EQ(lb.affine.pad_x, 0.0);
    EXPECT_EQ(lb.affine.pad_y, 0.0);
}

TEST(Letterbox, VisDroneResolution) {
    const Tensor img = Tensor::full({1, 3, 1500, 2000}, 0.2, Precision::f32);
    const Letterboxed lb = letterbox(img, 640);
    EXPECT_DOUBLE_EQ(lb.affine.scale, 0.32);
    EXPECT_EQ(lb.affine.pad_x, 0.0);
    EXPECT_EQ(lb.affine.pad_y, 80.0);
    EXPECT_EQ(lb.image.shape(), (Shape{1, 3, 640, 640}));
    EXPECT_NEAR(lb.image.at(0, 0, 79, 300), 0.5, 1e-7);
    EXPECT_NEAR(lb.image.at(0, 0, 80, 300), 0.2, 1e-6);
    EXPECT_NEAR(lb.image.at(0, 2, 559, 639), 0.2, 1e-6);
    EXPECT_NEAR(lb.image.at(0, 1, 560, 0), 0.5, 1e-7);
}

TEST(Letterbox, BoxRoundTrip) {
    const Tensor img = Tensor::full({1, 3, 37, 91}, 0.0);
    const Affine a = letterbox(img, 64).affine;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 90);
    for (int i = 0; i < 200; ++i) {
        const Box b{u(rng), u(rng) * 0.4, u(rng), u(rng) * 0.4};
        const Box r = a.inverse(a.forward(b));
        EXPECT_NEAR(r.x1, b.x1, 1e-9);
        EXPECT_NEAR(r.y1, b.y1, 1e-9);
        EXPECT_NEAR(r.x2, b.x2, 1e-9);
        EXPECT_NEAR(r.y2, b.y2, 1e-9);
    }
}

TEST(VisDrone, ParsesDocumentedLayout) {
    const auto g = parse_visdrone_annotation("100,200,30,60,1,1,0,0");
    ASSERT_TRUE(g);
    EXPECT_EQ(g->box, (Box{100, 200, 130, 260}));
    EXPECT_EQ(g->class_id, 0);
    EXPECT_EQ(visdrone_class_names()[0], "pedestrian");
    const auto h = parse_visdrone_annotation("1,2,3,4,0,10,1,2\r");
    ASSERT_TRUE(h);
    EXPECT_EQ(h->class_id, 9);
    EXPECT_EQ(h->truncation, 1);
    EXPECT_EQ(h->occlusion, 2);
}

TEST(VisDrone, SkipsIgnoredAndOthers) {
    EXPECT_FALSE(parse_visdrone_annotation("5,5,10,10,1,0,0,0"));
    EXPECT_FALSE(parse_visdrone_annotation("5,5,10,10,1,11,0,0"));
}

TEST(VisDrone, ClassIdsStayInVocabulary) {
    for (int cat = 0; cat <= 11; ++cat) {
        const auto g = parse_visdrone_annotation("0,0,4,4,1," + std::to_string(cat) + ",0,0");
        if (g) {
            EXPECT_GE(g->class_id, 0);
            EXPECT_LE(g->class_id, 9);
        }
    }
}

TEST(VisDrone, MalformedLinesReportLine) {
    for (const char* bad : {"1,2,3,4,5,6,7", "1,2,3,4,5,6,7,8,9", "1,2,x,4,1,1,0,0", "1,2,3,4,1,1,0,", "1,2,3,4,1,12,0,0",
                            "1,2,3,4,1,1,0,3"}) {
        try {
            parse_visdrone_annotation(bad, 17);
            FAIL() << bad;
        } catch (const ParseError& e) {
            EXPECT_EQ(e.line(), 17) << bad;
        }
    }
    const fs::path dir = scratch("ann");
    {
        std::ofstream f(dir / "a.txt");
        f << "1,2,3,4,1,1,0,0\n\n1,2,3\n";
    }
    try {
        read_annotations(dir / "a.txt");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3);
    }
}

TEST(VisDrone, RoundTrip) {
    std::mt19937_64 rng(4);
    for (int i = 0; i < 500; ++i) {
        GroundTruthBox g;
        const double l = double(rng() % 2000), t = double(rng() % 1500);
        g.box = {l, t, l + double(rng() % 300), t + double(rng() % 300)};
        g.class_id = static_cast<int>(rng() % 10);
        g.truncation = static_cast<int>(rng() % 2);
        g.occlusion = static_cast<int>(rng() % 3);
        EXPECT_EQ(parse_visdrone_annotation(format_visdrone_annotation(g)), g);
    }
}

TEST(VisDrone, SplitScan) {
    const fs::path root = scratch("splits");
    const std::vector<std::pair<std::string, int>> splits{
        {"VisDrone2019-DET-train", 3}, {"VisDrone2019-DET-val", 2}, {"VisDrone2019-DET-test-dev", 1}};
    for (const auto& [name, n] : splits) {
        fs::create_directories(root / name / "images");
        fs::create_directories(root / name / "annotations");
        for (int i = 0; i < n; ++i) {
            std::ofstream(root / name / "images" / (std::to_string(i) + ".sdti")) << "x";
            std::ofstream(root / name / "annotations" / (std::to_string(i) + ".txt")) << "";
        }
    }
    const auto found = scan_splits(root);
    ASSERT_EQ(found.size(), 3u);
    EXPECT_EQ(found[0].name, "train");
    EXPECT_EQ(found[0].images, 3);
    EXPECT_EQ(found[1].name, "val");
    EXPECT_EQ(found[1].annotations, 2);
    EXPECT_EQ(found[2].name, "test-dev");
    EXPECT_EQ(found[2].images, 1);
}

TEST(Synthetic, Deterministic) {
    SceneSpec s;
    s.seed = 7;
    const Scene a = generate_scene(s), b = generate_scene(s);
    EXPECT_EQ(a.image, b.image);
    EXPECT_EQ(a.boxes, b.boxes);
    s.seed = 8;
    EXPECT_NE(generate_scene(s).image, a.image);
}

TEST(Synthetic, ExactCount) {
    SceneSpec s;
    s.min_targets = s.max_targets = 5;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        s.seed = seed;
        const Scene sc = generate_scene(s);
        if (!sc.infeasible) EXPECT_EQ(sc.boxes.size(), 5u);
    }
}

TEST(Synthetic, InfeasibleIsFlagged) {
    SceneSpec s;
    s.width = s.height = 24;
    s.min_size = s.max_size = 20;
    s.min_targets = s.max_targets = 6;
    s.occlusion_prob = 0.0;
    s.max_retries = 5;
    const Scene sc = generate_scene(s);
    EXPECT_TRUE(sc.infeasible);
    EXPECT_EQ(sc.boxes.size(), 1u);
}

// Scans the rendered pixels of every target: visible pixels must carry the
// class colour and lie inside the emitted box; unoccluded targets must have a
// pixel extent matching the box.
TEST(Synthetic, PixelScanOracle) {
    SceneSpec s;
    s.occlusion_prob = 0.3;
    int checked_unoccluded = 0;
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        s.seed = seed;
        const Scene sc = generate_scene(s);
        std::vector<Box> extent(sc.boxes.size(), Box{1e9, 1e9, -1e9, -1e9});
        for (int y = 0; y < s.height; ++y)
            for (int x = 0; x < s.width; ++x) {
                const int o = sc.owner[static_cast<std::size_t>(y) * s.width + x];
                const auto px = std::array<std::uint8_t, 3>{sc.image.at(x, y, 0), sc.image.at(x, y, 1), sc.image.at(x, y, 2)};
                if (o < 0) {
                    for (int c = 0; c < 10; ++c) EXPECT_NE(px, class_color(c));
                    continue;
                }
                const GroundTruthBox& g = sc.boxes[static_cast<std::size_t>(o)];
                EXPECT_EQ(px, class_color(g.class_id));
                EXPECT_GE(x, g.box.x1);
                EXPECT_LT(x, g.box.x2);
                EXPECT_GE(y, g.box.y1);
                EXPECT_LT(y, g.box.y2);
                Box& e = extent[static_cast<std::size_t>(o)];
                e = {std::min(e.x1, double(x)), std::min(e.y1, double(y)), std::max(e.x2, x + 1.0), std::max(e.y2, y + 1.0)};
            }
        for (std::size_t k = 0; k < sc.boxes.size(); ++k) {
            const GroundTruthBox& g = sc.boxes[k];
            EXPECT_GE(g.box.width(), 4.0);
            EXPECT_GE(g.box.height(), 4.0);
            EXPECT_LE(g.box.x2, s.width);
            EXPECT_LE(g.box.y2, s.height);
            if (g.occlusion == 0) {
                EXPECT_GE(box_iou(extent[k], g.box), 0.95);
                ++checked_unoccluded;
            }
        }
    }
    EXPECT_GT(checked_unoccluded, 200);
}

TEST(Synthetic, SomeTargetsAreOccluded) {
    SceneSpec s;
    s.occlusion_prob = 0.5;
    s.min_targets = s.max_targets = 12;
    int occluded = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        s.seed = seed;
        for (const auto& g : generate_scene(s).boxes) occluded += g.occlusion > 0;
    }
    EXPECT_GT(occluded, 0);
}

TEST(Synthetic, RejectsInvalidSpec) {
    SceneSpec s;
    s.min_size = 3;
    EXPECT_THROW(generate_scene(s), ConfigError);
    s = SceneSpec{};
    s.min_targets = 5;
    s.max_targets = 4;
    EXPECT_THROW(generate_scene(s), ConfigError);
}

TEST(Dataset, WriteLoadAndBatch) {
    const fs::path dir = scratch("ds");
    SceneSpec s;
    s.width = s.height = 64;
    s.seed = 100;
    const fs::path manifest = write_synthetic_dataset(dir, 5, s);
    const auto entries = read_manifest(manifest);
    ASSERT_EQ(entries.size(), 5u);
    EXPECT_EQ(entries[3].seed, 103u);

    const Dataset ds = load_dataset(manifest, 64);
    ASSERT_EQ(ds.samples.size(), 5u);
    s.seed = 102;
    const Scene sc = generate_scene(s);
    EXPECT_EQ(ds.samples[2].image, sc.image);
    EXPECT_EQ(ds.samples[2].boxes, sc.boxes);

    const std::vector<std::size_t> idx{4, 2};
    const Tensor batch = make_batch(ds, idx, Precision::f64);
    EXPECT_EQ(batch.shape(), (Shape{2, 3, 64, 64}));
    EXPECT_EQ(batch.at(1, 0, 5, 7), sc.image.at(7, 5, 0) / 255.0);

    // Letterboxed load halves the coordinates.
    const Dataset small = load_dataset(manifest, 32);
    for (std::size_t k = 0; k < sc.boxes.size(); ++k) {
        EXPECT_NEAR(small.samples[2].boxes[k].box.x1, sc.boxes[k].box.x1 / 2, 1e-12);
        EXPECT_NEAR(small.samples[2].boxes[k].box.y2, sc.boxes[k].box.y2 / 2, 1e-12);
    }
}

TEST(Dataset, ManifestErrors) {
    const fs::path dir = scratch("man");
    {
        std::ofstream f(dir / "m.csv");
        f << "image,label,seed\na.sdti,a.txt,notanumber\n";
    }
    try {
        read_manifest(dir / "m.csv");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2);
    }
    {
        std::ofstream f(dir / "h.csv");
        f << "img,lbl\n";
    }
    EXPECT_THROW(read_manifest(dir / "h.csv"), ParseError);
}
