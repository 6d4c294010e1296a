#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "centerface/io.hpp"
#include "centerface/synth.hpp"

using namespace centerface;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("centerface_test_" + name);
}

std::vector<AnnotationRecord> parse(const std::string& text) {
    std::istringstream in(text);
    return parse_annotations(in);
}

}  // namespace

TEST_CASE("same seed gives a bitwise-identical dataset") {
    SceneSpec spec;
    spec.seed = 9;
    const auto a = generate_dataset(spec, 20), b = generate_dataset(spec, 20);
    for (int k = 0; k < 20; ++k) {
        CHECK(a[k].image == b[k].image);
        CHECK(a[k].boxes == b[k].boxes);
        CHECK(a[k].occluded == b[k].occluded);
    }
    spec.seed = 10;
    CHECK_FALSE(generate_dataset(spec, 1)[0].image == a[0].image);
    // prefix property
    CHECK(generate_scene({.seed = 9}, 7).image == a[7].image);
}

TEST_CASE("generated scenes respect placement invariants") {
    SceneSpec spec;
    spec.seed = 3;
    const double min_sep = 3.0 * spec.stride;
    for (const Sample& s : generate_dataset(spec, 200)) {
        CHECK(s.boxes.size() >= 1);
        CHECK(s.boxes.size() <= 4);
        CHECK(s.occluded.size() == s.boxes.size());
        for (const BBox& b : s.boxes) {
            CHECK_NOTHROW(validate(b));
            CHECK(b.x1 >= 0);
            CHECK(b.y1 >= 0);
            CHECK(b.x2 <= spec.width);
            CHECK(b.y2 <= spec.height);
        }
        for (std::size_t p = 0; p < s.boxes.size(); ++p) {
            for (std::size_t q = p + 1; q < s.boxes.size(); ++q) {
                const Keypoint a = center_of(s.boxes[p]), b = center_of(s.boxes[q]);
                CHECK(std::hypot(a.px - b.px, a.py - b.py) >= min_sep);
            }
        }
        for (double v : s.image.data) CHECK((v >= 0 && v <= 1));
    }
}

TEST_CASE("class balance over 1000 images is within 10 percent of even") {
    SceneSpec spec;
    spec.seed = 1;
    int counts[2] = {0, 0};
    for (const Sample& s : generate_dataset(spec, 1000))
        for (const BBox& b : s.boxes) ++counts[b.class_id];
    const double frac = static_cast<double>(counts[1]) / (counts[0] + counts[1]);
    CHECK(frac >= 0.45);
    CHECK(frac <= 0.55);
}

TEST_CASE("confusers follow their probability and only land on unmasked faces") {
    SceneSpec spec;
    spec.seed = 2;
    spec.confuser_probability = 0.0;
    for (const Sample& s : generate_dataset(spec, 200))
        for (bool o : s.occluded) CHECK_FALSE(o);

    spec.confuser_probability = 0.6;
    int faces = 0, occluded = 0;
    for (const Sample& s : generate_dataset(spec, 300)) {
        for (std::size_t k = 0; k < s.boxes.size(); ++k) {
            if (s.occluded[k]) CHECK(s.boxes[k].class_id == 0);
            faces += s.boxes[k].class_id == 0;
            occluded += s.occluded[k];
        }
    }
    CHECK(static_cast<double>(occluded) / faces == doctest::Approx(0.6).epsilon(0.15));
}

TEST_CASE("harder confuser settings keep the same geometry") {
    SceneSpec easy, hard;
    easy.seed = hard.seed = 4;
    easy.confuser_probability = 0.3;
    hard.confuser_probability = 0.5;
    const auto a = generate_dataset(easy, 50), b = generate_dataset(hard, 50);
    for (int k = 0; k < 50; ++k) {
        CHECK(a[k].boxes == b[k].boxes);
        for (std::size_t o = 0; o < a[k].occluded.size(); ++o) {
            if (a[k].occluded[o]) CHECK(b[k].occluded[o]);
        }
    }
}

TEST_CASE("scene spec validation") {
    SceneSpec s;
    s.max_size = 60;
    CHECK_THROWS_AS(s.validate(), InputError);
    s = {};
    s.confuser_probability = 1.5;
    CHECK_THROWS_AS(s.validate(), InputError);
    CHECK_THROWS_AS(generate_dataset(SceneSpec{}, 0), InputError);
}

TEST_CASE("annotation round trip") {
    const std::vector<AnnotationRecord> recs{
        {"img/0000.ppm", {{1.5, 2, 10.25, 14, 0}, {20, 20, 33, 40, 1}}},
        {"img/0001.ppm", {}},
    };
    const auto path = temp_file("ann.jsonl");
    write_annotations(path, recs);
    CHECK(read_annotations(path) == recs);
    std::filesystem::remove(path);
    CHECK(parse("").empty());
    CHECK(parse("\n\n").empty());
}

TEST_CASE("malformed annotation lines name the line and field") {
    auto expect = [](const std::string& text, int line, const std::string& field) {
        try {
            parse(text);
            FAIL("expected ParseError for " << text);
        } catch (const ParseError& e) {
            CHECK(e.line() == line);
            CHECK(e.field() == field);
        }
    };
    const std::string good = R"({"image":"a.ppm","boxes":[]})";
    expect(good + "\n" + R"({"image":"b.ppm","boxes":[{"x1":5,"y1":0,"x2":3,"y2":4,"class":0}]})", 2, "x1");
    expect(R"({"image":"b.ppm","boxes":[{"y1":0,"x2":3,"y2":4,"class":0}]})", 1, "x1");
    expect(R"({"image":"b.ppm","boxes":[{"x1":"a","y1":0,"x2":3,"y2":4,"class":0}]})", 1, "x1");
    expect(R"({"image":"b.ppm","boxes":[{"x1":0,"y1":0,"x2":3,"y2":4,"class":2}]})", 1, "class");
    expect(R"({"boxes":[]})", 1, "image");
    expect(good + "\n" + good + "\n{oops", 3, "<record>");
}

TEST_CASE("ppm round trip quantizes to 8 bits") {
    SceneSpec spec;
    const Sample s = generate_scene(spec, 0);
    const auto path = temp_file("img.ppm");
    write_ppm(path, s.image);
    const ImageTensor back = read_ppm(path);
    REQUIRE(back.same_shape(s.image));
    for (std::size_t k = 0; k < back.data.size(); ++k) CHECK(std::abs(back.data[k] - s.image.data[k]) <= 0.5 / 255 + 1e-12);
    write_ppm(path, back);
    CHECK(read_ppm(path) == back);
    std::filesystem::remove(path);
}

TEST_CASE("detection lines round trip") {
    const Detection d{{1.25, 2.5, 30, 40.75, 1}, 0.875};
    const auto path = temp_file("det.jsonl");
    {
        std::ofstream out(path);
        out << detection_line("x.ppm", d) << "\n";
    }
    const auto recs = read_detections(path);
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].image == "x.ppm");
    CHECK(recs[0].detection.box == d.box);
    CHECK(recs[0].detection.score == d.score);
    std::filesystem::remove(path);
}
