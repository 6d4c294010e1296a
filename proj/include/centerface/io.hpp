#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "centerface/decoder.hpp"
#include "centerface/evaluator.hpp"
#include "centerface/targets.hpp"
#include "centerface/tensor.hpp"
#include "centerface/trainer.hpp"

namespace centerface {

/// Malformed input file. what() names the line (1-based) and the field.
class ParseError : public std::runtime_error {
public:
    ParseError(int line, std::string field, const std::string& message);

    int line() const { return line_; }
    const std::string& field() const { return field_; }

private:
    int line_;
    std::string field_;
};

/// One JSONL line: {"image": path, "boxes": [{"x1","y1","x2","y2","class"}]}.
struct AnnotationRecord {
    std::string image;
    std::vector<BBox> boxes;
    bool operator==(const AnnotationRecord&) const = default;
};

std::string annotation_line(const AnnotationRecord& record);
std::vector<AnnotationRecord> parse_annotations(std::istream& in, int num_classes = kDefaultNumClasses);
std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path,
                                               int num_classes = kDefaultNumClasses);
void write_annotations(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records);

/// Binary PPM (P6), 8 bits per channel.
void write_ppm(const std::filesystem::path& path, const ImageTensor& image);
ImageTensor read_ppm(const std::filesystem::path& path);

inline constexpr int kTargetDumpVersion = 1;

/// Versioned JSON dump of an encoded target pack.
std::string target_pack_json(const TargetPack& pack, const std::string& image = {});

struct DetectionRecord {
    std::string image;
    Detection detection;
};

/// {"image","x1","y1","x2","y2","class","score"}
std::string detection_line(const std::string& image, const Detection& d);
std::vector<DetectionRecord> read_detections(const std::filesystem::path& path);

std::string eval_report_json(const EvalReport& report);

/// One training-log JSONL line with every loss component.
std::string step_log_line(const StepRecord& step);
/// Human-readable per-class table.
std::string eval_report_table(const EvalReport& report);

}  // namespace centerface
