#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "affect/dataset.hpp"
#include "affect/errors.hpp"
#include "affect/rng.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace affect;

namespace {

AnnotationRecord valid_record(const std::string& id = "f0") {
  AnnotationRecord r;
  r.frame_id = id;
  r.valence = 0.25;
  r.arousal = -0.5;
  r.expression = 3;
  r.au = {0, 1, 0, 1, 0, 0, 1, 0, 0, 0, 1, 0};
  return r;
}

std::filesystem::path temp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("affect_test_" + tag);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("drop reasons follow the fixed order") {
  const VaRange range;
  CHECK(drop_reason(valid_record(), range) == DropReason::kNone);

  AnnotationRecord r = valid_record();
  r.valence = -5.0;
  CHECK(drop_reason(r, range) == DropReason::kVa);

  r = valid_record();
  r.arousal = -5.0;
  CHECK(drop_reason(r, range) == DropReason::kVa);

  r = valid_record();
  r.valence = 1.5;
  CHECK(drop_reason(r, range) == DropReason::kVa);

  r = valid_record();
  r.expression = 8;
  CHECK(drop_reason(r, range) == DropReason::kExpr);
  r.expression = -1;
  CHECK(drop_reason(r, range) == DropReason::kExpr);

  r = valid_record();
  r.au[5] = 2;
  CHECK(drop_reason(r, range) == DropReason::kAu);
  r.au[5] = -1;
  CHECK(drop_reason(r, range) == DropReason::kAu);

  SUBCASE("first failing check wins") {
    AnnotationRecord bad = valid_record();
    bad.valence = 9.0;
    bad.expression = 99;
    bad.au[0] = 7;
    CHECK(drop_reason(bad, range) == DropReason::kVa);
    bad.valence = 0.0;
    CHECK(drop_reason(bad, range) == DropReason::kExpr);
    bad.expression = 0;
    CHECK(drop_reason(bad, range) == DropReason::kAu);
  }

  SUBCASE("range bounds are inclusive") {
    AnnotationRecord edge = valid_record();
    edge.valence = -1.0;
    edge.arousal = 1.0;
    CHECK(drop_reason(edge, range) == DropReason::kNone);
  }

  SUBCASE("the unlabeled sentinel is invalid in any range") {
    VaRange wide{-10.0, 10.0};
    AnnotationRecord s = valid_record();
    s.valence = -5.0;
    CHECK(drop_reason(s, wide) == DropReason::kVa);
    s.valence = -4.9;
    CHECK(drop_reason(s, wide) == DropReason::kNone);
  }

  SUBCASE("a custom range narrows acceptance") {
    VaRange narrow{0.0, 1.0};
    AnnotationRecord n = valid_record();
    n.arousal = -0.5;
    CHECK(drop_reason(n, narrow) == DropReason::kVa);
    n.arousal = 0.5;
    CHECK(drop_reason(n, narrow) == DropReason::kNone);
  }

  CHECK_THROWS_AS((VaRange{1.0, -1.0}.validate()), ConfigError);
}

TEST_CASE("curation keeps order and balances its counters") {
  std::vector<AnnotationRecord> records;
  records.push_back(valid_record("a"));
  AnnotationRecord bad_va = valid_record("b");
  bad_va.valence = -5;
  records.push_back(bad_va);
  AnnotationRecord bad_expr = valid_record("c");
  bad_expr.expression = 12;
  records.push_back(bad_expr);
  records.push_back(valid_record("d"));
  AnnotationRecord bad_au = valid_record("e");
  bad_au.au[11] = 3;
  records.push_back(bad_au);

  const CurationResult result = curate(records);
  REQUIRE(result.kept.size() == 2);
  CHECK(result.kept[0].frame_id == "a");
  CHECK(result.kept[1].frame_id == "d");
  CHECK(result.report.total_in == 5);
  CHECK(result.report.kept == 2);
  CHECK(result.report.dropped == 3);
  CHECK(result.report.invalid_va == 1);
  CHECK(result.report.invalid_expr == 1);
  CHECK(result.report.invalid_au == 1);
  CHECK(result.report.kept + result.report.dropped == result.report.total_in);

  const auto j = nlohmann::json::parse(result.report.to_json());
  CHECK(j.at("total_in") == 5);
  CHECK(j.at("invalid_expr") == 1);

  SUBCASE("curation is idempotent") {
    const CurationResult again = curate(result.kept);
    CHECK(again.kept.size() == result.kept.size());
    CHECK(again.report.dropped == 0);
    CHECK(again.report.kept == result.kept.size());
  }
}

TEST_CASE("annotation csv round trips exactly") {
  std::vector<AnnotationRecord> records;
  AnnotationRecord a = valid_record("frame_001");
  a.valence = 0.1 + 0.2;  // 0.30000000000000004, must survive verbatim
  a.arousal = -5.0;
  records.push_back(a);
  AnnotationRecord b = valid_record("frame_002");
  b.valence = 1e-17;
  b.arousal = -0.9999999999999999;
  b.expression = 7;
  records.push_back(b);

  std::ostringstream out;
  write_annotations(out, records);
  std::istringstream in(out.str());
  const auto back = parse_annotations(in);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].frame_id == records[i].frame_id);
    CHECK(back[i].valence == records[i].valence);
    CHECK(back[i].arousal == records[i].arousal);
    CHECK(back[i].expression == records[i].expression);
    CHECK(back[i].au == records[i].au);
  }
}

TEST_CASE("annotation parser is strict") {
  const std::string header = annotation_header();

  SUBCASE("header must match exactly") {
    std::istringstream in("frame,valence\nx,0.1\n");
    CHECK_THROWS_AS(parse_annotations(in), ParseError);
  }
  SUBCASE("arity is enforced") {
    std::istringstream in(header + "\nf0,0.1,0.2,3\n");
    CHECK_THROWS_WITH_AS(parse_annotations(in),
                         doctest::Contains("line 2"), ParseError);
  }
  SUBCASE("numeric fields must parse completely") {
    std::istringstream in(header +
                          "\nf0,abc,0.2,3,0,0,0,0,0,0,0,0,0,0,0,0\n");
    CHECK_THROWS_AS(parse_annotations(in), ParseError);
  }
  SUBCASE("expression must be an integer") {
    std::istringstream in(header +
                          "\nf0,0.1,0.2,3.5,0,0,0,0,0,0,0,0,0,0,0,0\n");
    CHECK_THROWS_AS(parse_annotations(in), ParseError);
  }
  SUBCASE("empty file is rejected") {
    std::istringstream in("");
    CHECK_THROWS_AS(parse_annotations(in), ParseError);
  }
  SUBCASE("out-of-range labels parse; curation decides validity") {
    std::istringstream in(header +
                          "\nf0,-5,-5,11,2,0,0,0,0,0,0,0,0,0,0,0\n");
    const auto records = parse_annotations(in);
    REQUIRE(records.size() == 1);
    CHECK(records[0].expression == 11);
    CHECK(records[0].au[0] == 2);
    CHECK(drop_reason(records[0], VaRange{}) == DropReason::kVa);
  }
  SUBCASE("carriage returns are tolerated") {
    std::istringstream in(header +
                          "\r\nf0,0.1,0.2,3,0,0,0,0,0,0,0,0,0,0,0,0\r\n");
    CHECK(parse_annotations(in).size() == 1);
  }
}

TEST_CASE("synthetic data is deterministic and always curatable") {
  const auto a = generate_synthetic(24, 99, 16);
  const auto b = generate_synthetic(24, 99, 16);
  const auto c = generate_synthetic(24, 100, 16);
  REQUIRE(a.size() == 24);
  REQUIRE(b.size() == 24);

  bool identical = true;
  bool differs_from_c = false;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < a.size(); ++i) {
    identical = identical && a[i].record.frame_id == b[i].record.frame_id &&
                a[i].record.valence == b[i].record.valence &&
                a[i].image.values() == b[i].image.values();
    differs_from_c =
        differs_from_c || a[i].record.valence != c[i].record.valence ||
        a[i].image.values() != c[i].image.values();
    ids.insert(a[i].record.frame_id);

    CHECK(a[i].image.shape() == Shape{3, 16, 16});
    CHECK(drop_reason(a[i].record, VaRange{}) == DropReason::kNone);
    for (double v : a[i].image.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK(identical);
  CHECK(differs_from_c);
  CHECK(ids.size() == a.size());  // frame ids are unique

  CHECK_THROWS_AS(generate_synthetic(0, 1, 16), ContractError);
  CHECK_THROWS_AS(generate_synthetic(4, 1, 7), ContractError);
}

TEST_CASE("ppm image files round trip") {
  const auto dir = temp_dir("ppm");
  std::filesystem::create_directories(dir);
  const auto samples = generate_synthetic(1, 5, 8);
  const std::string path = (dir / "img.ppm").string();

  write_ppm(path, samples[0].image);
  const Tensor back = read_ppm(path);
  CHECK(back.shape() == samples[0].image.shape());
  CHECK(back.values() == samples[0].image.values());

  CHECK_THROWS_AS(read_ppm((dir / "missing.ppm").string()), DataError);

  const std::string bad = (dir / "bad.ppm").string();
  {
    std::ofstream out(bad, std::ios::binary);
    out << "P5\n2 2\n255\n";
  }
  CHECK_THROWS_AS(read_ppm(bad), DataError);

  std::filesystem::remove_all(dir);
}

TEST_CASE("datasets round trip through a directory") {
  const auto dir = temp_dir("ds");
  const auto samples = generate_synthetic(6, 11, 8);
  save_dataset(dir.string(), samples);

  CHECK(std::filesystem::exists(dir / "annotations.csv"));
  CHECK(std::filesystem::exists(dir / "images"));

  const auto back = load_dataset(dir.string());
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(back[i].record.frame_id == samples[i].record.frame_id);
    CHECK(back[i].record.valence == samples[i].record.valence);
    CHECK(back[i].record.au == samples[i].record.au);
    CHECK(back[i].image.values() == samples[i].image.values());
  }

  CHECK_THROWS_AS(load_dataset((dir / "nope").string()), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training batches shuffle deterministically and cover the data") {
  const auto samples = generate_synthetic(8, 3, 8);

  SUBCASE("in-order batching slices the samples") {
    const auto batches = make_batches(samples, 3, 0, false);
    REQUIRE(batches.size() == 3);  // 3 + 3 + 2
    CHECK(batches[0].images.shape() == Shape{3, 3, 8, 8});
    CHECK(batches[2].images.shape() == Shape{2, 3, 8, 8});
    CHECK(batches[0].targets.expr ==
          std::vector<int>{samples[0].record.expression,
                           samples[1].record.expression,
                           samples[2].record.expression});
    CHECK(batches[0].targets.va.shape() == Shape{3, 2});
    CHECK(batches[0].targets.va.values()[0] == samples[0].record.valence);
    CHECK(batches[0].targets.va.values()[1] == samples[0].record.arousal);
    CHECK(batches[0].targets.au.shape() == Shape{3, kNumAus});
    CHECK(batches[0].targets.au.values()[1] ==
          static_cast<double>(samples[0].record.au[1]));
    // Image row 1 of batch 0 is sample 1's image.
    const auto& flat = batches[0].images.values();
    const auto& img = samples[1].image.values();
    const std::size_t stride = 3 * 8 * 8;
    for (std::size_t k = 0; k < stride; ++k) {
      CHECK(flat[stride + k] == img[k]);
    }
  }

  SUBCASE("a remainder below two is dropped") {
    const auto batches =
        make_batches(std::span<const Sample>(samples.data(), 7), 3, 0, false);
    REQUIRE(batches.size() == 2);
    CHECK(batches[1].images.shape()[0] == 3);
  }

  SUBCASE("shuffling is a seeded permutation") {
    const auto x = make_batches(samples, 2, 42, true);
    const auto y = make_batches(samples, 2, 42, true);
    const auto z = make_batches(samples, 2, 43, true);
    REQUIRE(x.size() == 4);
    std::vector<int> seen_x, seen_y, seen_z;
    for (std::size_t b = 0; b < x.size(); ++b) {
      seen_x.insert(seen_x.end(), x[b].targets.expr.begin(),
                    x[b].targets.expr.end());
      seen_y.insert(seen_y.end(), y[b].targets.expr.begin(),
                    y[b].targets.expr.end());
      seen_z.insert(seen_z.end(), z[b].targets.expr.begin(),
                    z[b].targets.expr.end());
    }
    CHECK(seen_x == seen_y);  // same seed, same order
    std::vector<int> all;
    for (const auto& s : samples) all.push_back(s.record.expression);
    auto sorted = [](std::vector<int> v) {
      std::sort(v.begin(), v.end());
      return v;
    };
    CHECK(sorted(seen_x) == sorted(all));  // a permutation, nothing lost
    CHECK(sorted(seen_z) == sorted(all));
  }

  SUBCASE("contract violations") {
    CHECK_THROWS_AS(make_batches(samples, 1, 0, false), ContractError);
    CHECK_THROWS_AS(
        make_batches(std::vector<Sample>{}, 4, 0, false), ContractError);
  }
}

TEST_CASE("eval batches keep order and cover everything") {
  const auto samples = generate_synthetic(5, 17, 8);
  const auto batches = make_eval_batches(samples, 2);
  REQUIRE(batches.size() == 3);  // 2 + 2 + 1
  CHECK(batches[2].images.shape()[0] == 1);
  std::vector<int> seen;
  for (const auto& b : batches) {
    seen.insert(seen.end(), b.targets.expr.begin(), b.targets.expr.end());
  }
  std::vector<int> expected;
  for (const auto& s : samples) expected.push_back(s.record.expression);
  CHECK(seen == expected);
  CHECK_THROWS_AS(make_eval_batches(samples, 0), ContractError);
}
