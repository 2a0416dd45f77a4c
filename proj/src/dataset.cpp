#include "affect/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <sstream>

#include "json.hpp"

#include "affect/errors.hpp"
#include "affect/rng.hpp"

namespace affect {

namespace {

constexpr double kVaSentinel = -5.0;

constexpr const char* kHeader =
    "frame_id,valence,arousal,expression,AU1,AU2,AU4,AU6,AU7,AU10,AU12,"
    "AU15,AU23,AU24,AU25,AU26";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string::size_type start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

double parse_double_field(const std::string& field, std::size_t line_no,
                          const char* what) {
  double value = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || field.empty()) {
    throw ParseError("line " + std::to_string(line_no) + ": bad " + what +
                     " value '" + field + "'");
  }
  return value;
}

int parse_int_field(const std::string& field, std::size_t line_no,
                    const char* what) {
  int value = 0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || field.empty()) {
    throw ParseError("line " + std::to_string(line_no) + ": bad " + what +
                     " value '" + field + "'");
  }
  return value;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw ContractError("double formatting failed");
  return std::string(buf, ptr);
}

bool path_safe(const std::string& id) {
  if (id.empty()) return false;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

double quantize8(double v) {
  return std::llround(v * 255.0) / 255.0;
}

}  // namespace

// ---------------------------------------------------------------- curation

void VaRange::validate() const {
  if (!(lo <= hi)) {
    throw ConfigError("valence/arousal range low bound exceeds high bound");
  }
}

DropReason drop_reason(const AnnotationRecord& r, const VaRange& range) {
  range.validate();
  if (r.valence == kVaSentinel || r.arousal == kVaSentinel ||
      r.valence < range.lo || r.valence > range.hi || r.arousal < range.lo ||
      r.arousal > range.hi) {
    return DropReason::kVa;
  }
  if (r.expression < 0 ||
      r.expression >= static_cast<int>(kNumExpressions)) {
    return DropReason::kExpr;
  }
  for (int a : r.au) {
    if (a != 0 && a != 1) return DropReason::kAu;
  }
  return DropReason::kNone;
}

CurationResult curate(std::span<const AnnotationRecord> records,
                      const VaRange& range) {
  range.validate();
  CurationResult result;
  result.report.total_in = records.size();
  for (const auto& r : records) {
    switch (drop_reason(r, range)) {
      case DropReason::kNone:
        result.kept.push_back(r);
        ++result.report.kept;
        break;
      case DropReason::kVa:
        ++result.report.invalid_va;
        ++result.report.dropped;
        break;
      case DropReason::kExpr:
        ++result.report.invalid_expr;
        ++result.report.dropped;
        break;
      case DropReason::kAu:
        ++result.report.invalid_au;
        ++result.report.dropped;
        break;
    }
  }
  return result;
}

std::string CurationReport::to_json() const {
  nlohmann::json j;
  j["total_in"] = total_in;
  j["kept"] = kept;
  j["dropped"] = dropped;
  j["invalid_va"] = invalid_va;
  j["invalid_expr"] = invalid_expr;
  j["invalid_au"] = invalid_au;
  return j.dump(2);
}

// --------------------------------------------------------------- CSV I/O

std::string annotation_header() { return kHeader; }

std::vector<AnnotationRecord> parse_annotations(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<AnnotationRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != kHeader) {
        throw ParseError("line 1: header must be exactly '" +
                         std::string(kHeader) + "'");
      }
      continue;
    }
    if (line.empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": empty line");
    }
    const auto fields = split_csv(line);
    if (fields.size() != 4 + kNumAus) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(4 + kNumAus) + " columns, got " +
                       std::to_string(fields.size()));
    }
    AnnotationRecord r;
    r.frame_id = fields[0];
    if (r.frame_id.empty()) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": empty frame_id");
    }
    r.valence = parse_double_field(fields[1], line_no, "valence");
    r.arousal = parse_double_field(fields[2], line_no, "arousal");
    r.expression = parse_int_field(fields[3], line_no, "expression");
    for (std::size_t i = 0; i < kNumAus; ++i) {
      r.au[i] = parse_int_field(fields[4 + i], line_no, kAuNames[i]);
    }
    records.push_back(std::move(r));
  }
  if (line_no == 0) throw ParseError("empty annotation file");
  return records;
}

std::vector<AnnotationRecord> load_annotations(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open annotations file " + path);
  return parse_annotations(in);
}

void write_annotations(std::ostream& out,
                       std::span<const AnnotationRecord> records) {
  out << kHeader << '\n';
  for (const auto& r : records) {
    out << r.frame_id << ',' << format_double(r.valence) << ','
        << format_double(r.arousal) << ',' << r.expression;
    for (int a : r.au) out << ',' << a;
    out << '\n';
  }
}

// ------------------------------------------------------------- synthetic

std::vector<Sample> generate_synthetic(std::size_t count, std::uint64_t seed,
                                       std::size_t image_size) {
  if (count == 0) {
    throw ContractError("synthetic generation needs count >= 1");
  }
  if (image_size < 8) {
    throw ContractError("synthetic images need image_size >= 8");
  }
  const std::size_t s = image_size;
  Rng rng(seed);
  std::vector<Sample> samples;
  samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    AnnotationRecord r;
    char id[32];
    std::snprintf(id, sizeof(id), "%06zu", i);
    r.frame_id = id;
    r.expression = static_cast<int>(i % kNumExpressions);
    r.valence = rng.uniform(-1.0, 1.0);
    r.arousal = rng.uniform(-1.0, 1.0);
    for (std::size_t u = 0; u < kNumAus; ++u) {
      r.au[u] = static_cast<int>(rng.below(2));
    }
    // The first two samples pin every unit inactive then active, so both
    // classes of every unit are present in any set of two or more.
    if (i == 0) r.au.fill(0);
    if (i == 1) r.au.fill(1);

    std::vector<double> pix(3 * s * s, 0.0);
    double* red = pix.data();
    double* green = red + s * s;
    double* blue = green + s * s;

    const double top = quantize8((r.valence + 1.0) / 2.0);
    const double bottom = quantize8((r.arousal + 1.0) / 2.0);
    for (std::size_t y = 0; y < s; ++y) {
      const double v = y < s / 2 ? top : bottom;
      for (std::size_t x = 0; x < s; ++x) red[y * s + x] = v;
    }

    // 3x3 grid, center cell unused: cell index skips position 4.
    const int cell = r.expression >= 4 ? r.expression + 1 : r.expression;
    const std::size_t gy = static_cast<std::size_t>(cell) / 3;
    const std::size_t gx = static_cast<std::size_t>(cell) % 3;
    const double g_on = quantize8(0.9);
    const double g_off = quantize8(0.1);
    for (std::size_t y = 0; y < s; ++y) {
      const bool in_row = y >= gy * s / 3 && y < (gy + 1) * s / 3;
      for (std::size_t x = 0; x < s; ++x) {
        const bool in_col = x >= gx * s / 3 && x < (gx + 1) * s / 3;
        green[y * s + x] = in_row && in_col ? g_on : g_off;
      }
    }

    for (std::size_t y = 0; y < s; ++y) {
      const std::size_t pr = std::min<std::size_t>(y * 4 / s, 3);
      for (std::size_t x = 0; x < s; ++x) {
        const std::size_t pc = std::min<std::size_t>(x * 3 / s, 2);
        const std::size_t unit = pr * 3 + pc;
        blue[y * s + x] = r.au[unit] ? g_on : g_off;
      }
    }

    samples.push_back(Sample{Tensor({3, s, s}, std::move(pix)), std::move(r)});
  }
  return samples;
}

// ----------------------------------------------------------------- PPM

void write_ppm(const std::string& path, const Tensor& image) {
  if (!image.defined() || image.rank() != 3 || image.dim(0) != 3) {
    throw ContractError("write_ppm expects a [3,H,W] image");
  }
  const std::size_t h = image.dim(1);
  const std::size_t w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "P6\n" << w << ' ' << h << "\n255\n";
  const auto& v = image.values();
  std::vector<unsigned char> row(3 * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double val = v[(c * h + y) * w + x];
        if (!(val >= 0.0 && val <= 1.0)) {
          throw ContractError("pixel values must lie in [0,1] to write PPM");
        }
        row[3 * x + c] = static_cast<unsigned char>(std::llround(val * 255.0));
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw DataError("short write to " + path);
}

namespace {

// Reads one PPM header token, skipping whitespace and # comments. Consumes
// exactly one terminator byte after the token, which is the byte separating
// the maxval field from the raster.
std::string ppm_token(std::istream& in, const std::string& path) {
  int c = in.get();
  while (c != EOF &&
         (std::isspace(static_cast<unsigned char>(c)) || c == '#')) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    }
    c = in.get();
  }
  std::string token;
  while (c != EOF && !std::isspace(static_cast<unsigned char>(c))) {
    token.push_back(static_cast<char>(c));
    c = in.get();
  }
  if (token.empty()) throw DataError("truncated PPM header in " + path);
  return token;
}

}  // namespace

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path);
  if (ppm_token(in, path) != "P6") {
    throw DataError(path + " is not a binary PPM (P6) file");
  }
  const auto parse_dim = [&](const char* what) {
    const std::string tok = ppm_token(in, path);
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || v == 0) {
      throw DataError(std::string("bad PPM ") + what + " in " + path);
    }
    return v;
  };
  const std::size_t w = parse_dim("width");
  const std::size_t h = parse_dim("height");
  const std::size_t maxval = parse_dim("maxval");
  if (maxval != 255) {
    throw DataError("only 8-bit PPM supported, " + path + " has maxval " +
                    std::to_string(maxval));
  }
  std::vector<unsigned char> raw(3 * w * h);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw DataError("truncated pixel data in " + path);
  }
  std::vector<double> pix(3 * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        pix[(c * h + y) * w + x] = raw[(y * w + x) * 3 + c] / 255.0;
      }
    }
  }
  return Tensor({3, h, w}, std::move(pix));
}

// ------------------------------------------------------------ dataset dir

void save_dataset(const std::string& dir, std::span<const Sample> samples) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  if (ec) throw DataError("cannot create dataset directory " + dir);
  std::ofstream csv(fs::path(dir) / "annotations.csv", std::ios::binary);
  if (!csv) throw DataError("cannot write annotations in " + dir);
  std::vector<AnnotationRecord> records;
  records.reserve(samples.size());
  for (const auto& s : samples) records.push_back(s.record);
  write_annotations(csv, records);
  if (!csv) throw DataError("short write to annotations in " + dir);
  for (const auto& s : samples) {
    if (!path_safe(s.record.frame_id)) {
      throw DataError("frame_id '" + s.record.frame_id +
                      "' is not a safe file name");
    }
    write_ppm((fs::path(dir) / "images" / (s.record.frame_id + ".ppm"))
                  .string(),
              s.image);
  }
}

std::vector<Sample> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto records =
      load_annotations((fs::path(dir) / "annotations.csv").string());
  std::vector<Sample> samples;
  samples.reserve(records.size());
  for (const auto& r : records) {
    if (!path_safe(r.frame_id)) {
      throw DataError("frame_id '" + r.frame_id +
                      "' is not a safe file name");
    }
    Tensor image =
        read_ppm((fs::path(dir) / "images" / (r.frame_id + ".ppm")).string());
    samples.push_back(Sample{std::move(image), r});
  }
  return samples;
}

// --------------------------------------------------------------- batching

namespace {

Batch build_batch(std::span<const Sample> samples,
                  std::span<const std::size_t> order, std::size_t begin,
                  std::size_t end) {
  const std::size_t b = end - begin;
  const auto& shape = samples[order[begin]].image.shape();
  const std::size_t chw = shape_numel(shape);
  std::vector<double> images(b * chw);
  std::vector<double> va(b * 2);
  std::vector<double> au(b * kNumAus);
  std::vector<int> expr(b);
  for (std::size_t i = 0; i < b; ++i) {
    const Sample& s = samples[order[begin + i]];
    if (s.image.shape() != shape) {
      throw ShapeError("all images in a batch must share one shape");
    }
    const auto& pix = s.image.values();
    std::copy(pix.begin(), pix.end(), images.begin() + i * chw);
    va[i * 2] = s.record.valence;
    va[i * 2 + 1] = s.record.arousal;
    expr[i] = s.record.expression;
    for (std::size_t u = 0; u < kNumAus; ++u) {
      au[i * kNumAus + u] = static_cast<double>(s.record.au[u]);
    }
  }
  Batch batch;
  batch.images = Tensor({b, shape[0], shape[1], shape[2]}, std::move(images));
  batch.targets.va = Tensor({b, 2}, std::move(va));
  batch.targets.au = Tensor({b, kNumAus}, std::move(au));
  batch.targets.expr = std::move(expr);
  return batch;
}

std::vector<Batch> batches_impl(std::span<const Sample> samples,
                                std::size_t batch_size, std::uint64_t seed,
                                bool shuffle, std::size_t min_keep) {
  if (samples.empty()) throw ContractError("cannot batch an empty sample list");
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle) {
    Rng rng(seed);
    rng.shuffle(order);
  }
  std::vector<Batch> out;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t end = std::min(begin + batch_size, order.size());
    if (end - begin < min_keep) break;
    out.push_back(build_batch(samples, order, begin, end));
  }
  return out;
}

}  // namespace

std::vector<Batch> make_batches(std::span<const Sample> samples,
                                std::size_t batch_size, std::uint64_t seed,
                                bool shuffle) {
  if (batch_size < 2) {
    throw ContractError("training batches need batch_size >= 2");
  }
  return batches_impl(samples, batch_size, seed, shuffle, 2);
}

std::vector<Batch> make_eval_batches(std::span<const Sample> samples,
                                     std::size_t batch_size) {
  if (batch_size == 0) {
    throw ContractError("eval batches need batch_size >= 1");
  }
  return batches_impl(samples, batch_size, 0, false, 1);
}

}  // namespace affect
