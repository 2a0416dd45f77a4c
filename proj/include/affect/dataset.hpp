#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "affect/labels.hpp"
#include "affect/losses.hpp"
#include "affect/tensor.hpp"

namespace affect {

/// One annotated frame. Values are stored as parsed; validity is decided
/// by curation, not by the parser.
struct AnnotationRecord {
  std::string frame_id;
  double valence = 0.0;
  double arousal = 0.0;
  int expression = 0;
  std::array<int, kNumAus> au = {};
};

/// Accepted valence/arousal interval. The -5 sentinel marking an unlabeled
/// dimension is rejected regardless of this range.
struct VaRange {
  double lo = -1.0;
  double hi = 1.0;

  void validate() const;  // throws ConfigError when lo > hi
};

/// First failing check, in the fixed order the counters are attributed:
/// valence/arousal, then expression, then action units.
enum class DropReason { kNone, kVa, kExpr, kAu };

DropReason drop_reason(const AnnotationRecord& record, const VaRange& range);

struct CurationReport {
  std::size_t total_in = 0;
  std::size_t kept = 0;
  std::size_t dropped = 0;
  std::size_t invalid_va = 0;
  std::size_t invalid_expr = 0;
  std::size_t invalid_au = 0;

  std::string to_json() const;
};

struct CurationResult {
  std::vector<AnnotationRecord> kept;
  CurationReport report;
};

CurationResult curate(std::span<const AnnotationRecord> records,
                      const VaRange& range = {});

/// The exact header line every annotation CSV must carry.
std::string annotation_header();

/// Strict 16-column CSV. Throws ParseError naming the offending line;
/// trailing carriage returns are tolerated.
std::vector<AnnotationRecord> parse_annotations(std::istream& in);
std::vector<AnnotationRecord> load_annotations(const std::string& path);

void write_annotations(std::ostream& out,
                       std::span<const AnnotationRecord> records);

/// An image with its labels. Images are [3,S,S] with values in [0,1].
struct Sample {
  Tensor image;
  AnnotationRecord record;
};

/// Deterministic label-faithful toy data: valence and arousal are painted
/// into the red channel (top and bottom halves), the expression class
/// selects one cell of a 3x3 green grid (center unused), and each action
/// unit toggles one patch of a 4x3 blue grid. Channels are quantized to
/// 8 bits so a saved and reloaded dataset is bit-identical.
std::vector<Sample> generate_synthetic(std::size_t count, std::uint64_t seed,
                                       std::size_t image_size);

/// Binary 8-bit PPM (P6). Round-trips the quantized images exactly.
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

/// Layout: <dir>/annotations.csv plus <dir>/images/<frame_id>.ppm.
void save_dataset(const std::string& dir, std::span<const Sample> samples);
std::vector<Sample> load_dataset(const std::string& dir);

struct Batch {
  Tensor images;  // [B,3,S,S]
  BatchTargets targets;
};

/// Shuffled (optional) fixed-size batches for training. batch_size must be
/// at least 2 because the concordance loss needs batch statistics; a
/// trailing remainder below 2 is dropped.
std::vector<Batch> make_batches(std::span<const Sample> samples,
                                std::size_t batch_size, std::uint64_t seed,
                                bool shuffle);

/// In-order batches covering every sample, for evaluation. The trailing
/// batch may be as small as 1.
std::vector<Batch> make_eval_batches(std::span<const Sample> samples,
                                     std::size_t batch_size);

}  // namespace affect
