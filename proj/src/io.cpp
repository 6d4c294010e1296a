#include "centerface/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace centerface {

using nlohmann::json;

ParseError::ParseError(int line, std::string field, const std::string& message)
    : std::runtime_error("line " + std::to_string(line) + ", field '" + field + "': " + message),
      line_(line),
      field_(std::move(field)) {}

namespace {

constexpr const char* kClassNames[] = {"face", "masked_face"};

double number_field(const json& obj, const char* key, int line) {
    if (!obj.contains(key)) throw ParseError(line, key, "missing");
    const json& v = obj.at(key);
    if (!v.is_number()) throw ParseError(line, key, "not a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ParseError(line, key, "not finite");
    return d;
}

}  // namespace

std::string annotation_line(const AnnotationRecord& record) {
    json boxes = json::array();
    for (const BBox& b : record.boxes) {
        boxes.push_back({{"x1", b.x1}, {"y1", b.y1}, {"x2", b.x2}, {"y2", b.y2}, {"class", b.class_id}});
    }
    return json{{"image", record.image}, {"boxes", boxes}}.dump();
}

std::vector<AnnotationRecord> parse_annotations(std::istream& in, int num_classes) {
    std::vector<AnnotationRecord> out;
    std::string text;
    int line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        json doc;
        try {
            doc = json::parse(text);
        } catch (const json::parse_error&) {
            throw ParseError(line, "<record>", "not valid JSON");
        }
        if (!doc.is_object()) throw ParseError(line, "<record>", "not a JSON object");
        if (!doc.contains("image") || !doc.at("image").is_string()) {
            throw ParseError(line, "image", "missing or not a string");
        }
        if (!doc.contains("boxes") || !doc.at("boxes").is_array()) {
            throw ParseError(line, "boxes", "missing or not an array");
        }
        AnnotationRecord rec;
        rec.image = doc.at("image").get<std::string>();
        for (const json& b : doc.at("boxes")) {
            if (!b.is_object()) throw ParseError(line, "boxes", "entry is not an object");
            BBox box;
            box.x1 = number_field(b, "x1", line);
            box.y1 = number_field(b, "y1", line);
            box.x2 = number_field(b, "x2", line);
            box.y2 = number_field(b, "y2", line);
            if (!b.contains("class")) throw ParseError(line, "class", "missing");
            const json& c = b.at("class");
            if (!c.is_number_integer()) throw ParseError(line, "class", "not an integer");
            box.class_id = c.get<int>();
            if (box.class_id < 0 || box.class_id >= num_classes) {
                throw ParseError(line, "class", "value " + std::to_string(box.class_id) + " outside [0, " +
                                                    std::to_string(num_classes) + ")");
            }
            if (!(box.x1 < box.x2)) throw ParseError(line, "x1", "x1 must be < x2");
            if (!(box.y1 < box.y2)) throw ParseError(line, "y1", "y1 must be < y2");
            rec.boxes.push_back(box);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path, int num_classes) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open annotation file '" + path.string() + "'");
    return parse_annotations(in, num_classes);
}

void write_annotations(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    for (const auto& r : records) out << annotation_line(r) << '\n';
}

void write_ppm(const std::filesystem::path& path, const ImageTensor& image) {
    if (image.channels != 3) throw InputError("PPM output needs a 3-channel image");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(image.width) * 3);
    for (int i = 0; i < image.height; ++i) {
        for (int j = 0; j < image.width; ++j) {
            for (int c = 0; c < 3; ++c) {
                const double v = std::clamp(image(c, i, j), 0.0, 1.0);
                row[static_cast<std::size_t>(j) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
}

ImageTensor read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open image '" + path.string() + "'");
    auto token = [&]() {
        std::string t;
        while (in >> t) {
            if (t[0] == '#') {
                std::string rest;
                std::getline(in, rest);
                continue;
            }
            return t;
        }
        throw std::runtime_error("truncated PPM header in '" + path.string() + "'");
    };
    if (token() != "P6") throw std::runtime_error("'" + path.string() + "' is not a binary PPM (P6)");
    const int width = std::stoi(token());
    const int height = std::stoi(token());
    const int maxval = std::stoi(token());
    if (width <= 0 || height <= 0 || maxval != 255) {
        throw std::runtime_error("unsupported PPM geometry in '" + path.string() + "'");
    }
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> buf(static_cast<std::size_t>(width) * height * 3);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
        throw std::runtime_error("truncated PPM pixel data in '" + path.string() + "'");
    }
    ImageTensor img(3, height, width);
    for (int i = 0; i < height; ++i) {
        for (int j = 0; j < width; ++j) {
            for (int c = 0; c < 3; ++c) {
                img(c, i, j) = buf[(static_cast<std::size_t>(i) * width + j) * 3 + c] / 255.0;
            }
        }
    }
    return img;
}

std::string target_pack_json(const TargetPack& pack, const std::string& image) {
    json objects = json::array();
    for (const ObjectTarget& o : pack.objects) {
        objects.push_back({{"cell", {o.cell.i, o.cell.j}},
                           {"class", o.class_id},
                           {"offset", {o.offset.dx, o.offset.dy}},
                           {"size", {o.width, o.height}}});
    }
    json mask = json::array();
    for (bool m : pack.mask) mask.push_back(m ? 1 : 0);
    json doc = {{"format", "centerface-targets"},
                {"version", kTargetDumpVersion},
                {"image", image},
                {"stride", pack.stride},
                {"grid", {pack.grid_height, pack.grid_width}},
                {"num_classes", pack.heatmap.channels},
                {"n_objects", pack.n_objects()},
                {"heatmap", pack.heatmap.data},
                {"objects", objects},
                {"mask", mask}};
    return doc.dump();
}

std::string detection_line(const std::string& image, const Detection& d) {
    return json{{"image", image},   {"x1", d.box.x1},         {"y1", d.box.y1}, {"x2", d.box.x2},
                {"y2", d.box.y2},   {"class", d.box.class_id}, {"score", d.score}}
        .dump();
}

std::vector<DetectionRecord> read_detections(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open detection file '" + path.string() + "'");
    std::vector<DetectionRecord> out;
    std::string text;
    int line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        json doc;
        try {
            doc = json::parse(text);
        } catch (const json::parse_error&) {
            throw ParseError(line, "<record>", "not valid JSON");
        }
        DetectionRecord r;
        if (doc.contains("image")) {
            if (!doc.at("image").is_string()) throw ParseError(line, "image", "not a string");
            r.image = doc.at("image").get<std::string>();
        }
        r.detection.box.x1 = number_field(doc, "x1", line);
        r.detection.box.y1 = number_field(doc, "y1", line);
        r.detection.box.x2 = number_field(doc, "x2", line);
        r.detection.box.y2 = number_field(doc, "y2", line);
        if (!doc.contains("class") || !doc.at("class").is_number_integer()) {
            throw ParseError(line, "class", "missing or not an integer");
        }
        r.detection.box.class_id = doc.at("class").get<int>();
        r.detection.score = number_field(doc, "score", line);
        out.push_back(std::move(r));
    }
    return out;
}

std::string eval_report_json(const EvalReport& report) {
    json classes = json::array();
    for (std::size_t c = 0; c < report.per_class.size(); ++c) {
        const ClassMetrics& m = report.per_class[c];
        classes.push_back({{"class", c},
                           {"name", c < 2 ? kClassNames[c] : "class" + std::to_string(c)},
                           {"tp", m.counts.tp},
                           {"fp", m.counts.fp},
                           {"fn", m.counts.fn},
                           {"precision", m.precision},
                           {"recall", m.recall},
                           {"f1", m.f1()}});
    }
    return json{{"iou_threshold", report.iou_threshold}, {"classes", classes}, {"mean_f1", report.mean_f1()}}
        .dump();
}

std::string step_log_line(const StepRecord& step) {
    const LossBreakdown& l = step.loss;
    return json{{"iteration", step.iteration}, {"lr", step.learning_rate}, {"total", l.total},
                {"center", l.center},          {"pix", l.pix},            {"off", l.off},
                {"size", l.size},              {"triplet", l.triplet},    {"consistency", l.consistency},
                {"con_cls", l.con_cls},        {"con_loc", l.con_loc}}
        .dump();
}

std::string eval_report_table(const EvalReport& report) {
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-12s %6s %6s %6s %10s %10s\n", "class", "TP", "FP", "FN", "precision",
                  "recall");
    os << buf;
    for (std::size_t c = 0; c < report.per_class.size(); ++c) {
        const ClassMetrics& m = report.per_class[c];
        const std::string name = c < 2 ? kClassNames[c] : "class" + std::to_string(c);
        std::snprintf(buf, sizeof buf, "%-12s %6d %6d %6d %9.1f%% %9.1f%%\n", name.c_str(), m.counts.tp,
                      m.counts.fp, m.counts.fn, 100.0 * m.precision, 100.0 * m.recall);
        os << buf;
    }
    return os.str();
}

}  // namespace centerface
