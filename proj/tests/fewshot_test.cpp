#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "dyco/fewshot.hpp"

using namespace dyco;

namespace {

std::vector<IQFrame> grid_frames(int64_t per_cell, uint64_t seed) {
  DatasetSpec spec;
  spec.classes = {ModClass::BPSK, ModClass::QPSK, ModClass::PSK8, ModClass::QAM16};
  spec.snrs_db = {0, 10, 18};
  spec.frames_per_class_per_snr = per_cell;
  spec.length = 128;
  return synth_dataset(spec, seed);
}

ClassifierModel tiny_model(uint64_t seed) {
  ClassifierModel m;
  m.backbone_cfg = BackboneConfig{};
  m.backbone_params = init_backbone_params(m.backbone_cfg, seed);
  m.fusion_cfg = FusionConfig{};
  m.fusion_cfg.num_classes = 4;
  m.fusion_params = init_fusion_params(m.fusion_cfg, seed + 1);
  return m;
}

}  // namespace

TEST_SUITE("fewshot") {

TEST_CASE("split takes N per (class, snr) cell, support and query are disjoint") {
  auto frames = grid_frames(5, 31);
  FewShotSplit sp = make_split(frames, 1, 7);
  // 4 classes x 3 SNRs x 1 shot
  CHECK(sp.support.size() == 12);
  CHECK(sp.support.size() + sp.query.size() == frames.size());
  std::set<int64_t> s(sp.support.begin(), sp.support.end());
  CHECK(s.size() == sp.support.size());
  for (int64_t q : sp.query) CHECK(s.count(q) == 0);

  // exactly N support frames in every cell
  std::map<std::pair<uint16_t, int16_t>, int> cell;
  for (int64_t i : sp.support) ++cell[{frames[static_cast<size_t>(i)].label, frames[static_cast<size_t>(i)].snr_db}];
  CHECK(cell.size() == 12);
  for (const auto& [k, n] : cell) CHECK(n == 1);

  FewShotSplit sp3 = make_split(frames, 3, 7);
  CHECK(sp3.support.size() == 36);
}

TEST_CASE("split is deterministic per seed and varies across seeds") {
  auto frames = grid_frames(6, 32);
  FewShotSplit a = make_split(frames, 2, 5);
  FewShotSplit b = make_split(frames, 2, 5);
  CHECK(a.support == b.support);
  CHECK(a.query == b.query);
  FewShotSplit c = make_split(frames, 2, 6);
  CHECK(a.support != c.support);
}

TEST_CASE("split rejects a cell that cannot supply N support plus one query frame") {
  auto frames = grid_frames(2, 33);
  try {
    make_split(frames, 2, 1);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    // the failing cell is named
    CHECK(msg.find("class") != std::string::npos);
    CHECK(msg.find("snr") != std::string::npos);
  }
}

TEST_CASE("evaluate: accuracy bounds, confusion marginals, per-SNR weighting") {
  auto frames = grid_frames(3, 34);
  FewShotSplit sp = make_split(frames, 1, 9);
  ClassifierModel m = tiny_model(35);
  EvalReport rep = evaluate(m, frames, sp);

  CHECK(rep.accuracy >= 0.0);
  CHECK(rep.accuracy <= 1.0);
  CHECK(rep.num_classes == 4);
  REQUIRE(rep.confusion.size() == 16);

  // confusion rows sum to the per-class query counts
  std::vector<int64_t> expect(4, 0);
  for (int64_t q : sp.query) ++expect[frames[static_cast<size_t>(q)].label];
  for (int64_t c = 0; c < 4; ++c) {
    int64_t row = 0;
    for (int64_t j = 0; j < 4; ++j) row += rep.confusion[static_cast<size_t>(c * 4 + j)];
    CHECK(row == expect[static_cast<size_t>(c)]);
  }

  // overall accuracy equals the diagonal mass and the query-weighted mean of
  // the per-SNR curve
  int64_t diag = 0, total = 0;
  for (int64_t c = 0; c < 4; ++c)
    for (int64_t j = 0; j < 4; ++j) {
      total += rep.confusion[static_cast<size_t>(c * 4 + j)];
      if (c == j) diag += rep.confusion[static_cast<size_t>(c * 4 + j)];
    }
  CHECK(total == static_cast<int64_t>(sp.query.size()));
  CHECK(rep.accuracy == doctest::Approx(static_cast<double>(diag) / static_cast<double>(total)).epsilon(1e-12));

  std::map<int16_t, int64_t> snr_counts;
  for (int64_t q : sp.query) ++snr_counts[frames[static_cast<size_t>(q)].snr_db];
  double weighted = 0.0;
  REQUIRE(rep.per_snr.size() == 3);
  int16_t prev = -32768;
  for (const auto& [snr, acc] : rep.per_snr) {
    CHECK(snr > prev);
    prev = snr;
    weighted += acc * static_cast<double>(snr_counts.at(snr));
  }
  weighted /= static_cast<double>(sp.query.size());
  CHECK(weighted == doctest::Approx(rep.accuracy).epsilon(1e-12));
}

TEST_CASE("evaluation is deterministic") {
  auto frames = grid_frames(2, 36);
  FewShotSplit sp = make_split(frames, 1, 11);
  ClassifierModel m = tiny_model(37);
  EvalReport a = evaluate(m, frames, sp);
  EvalReport b = evaluate(m, frames, sp);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.confusion == b.confusion);
}

TEST_CASE("report serialization: JSON keys and CSV layout") {
  auto frames = grid_frames(2, 38);
  FewShotSplit sp = make_split(frames, 1, 13);
  ClassifierModel m = tiny_model(39);
  EvalReport rep = evaluate(m, frames, sp);

  std::string js = rep.to_json();
  for (const char* key : {"\"accuracy\"", "\"per_snr\"", "\"confusion\"", "\"num_classes\"", "\"n_shots\"", "\"seed\""})
    CHECK(js.find(key) != std::string::npos);

  std::string csv = snr_curve_csv(rep);
  std::istringstream in(csv);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "snr_db,accuracy");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 3);

  std::string cm = rep.confusion_csv();
  std::istringstream cin2(cm);
  int cmrows = 0;
  while (std::getline(cin2, line))
    if (!line.empty()) ++cmrows;
  CHECK(cmrows >= 4);
}

TEST_CASE("predict_probs returns row-stochastic output") {
  auto frames = grid_frames(2, 40);
  ClassifierModel m = tiny_model(41);
  Tensor p = predict_probs(m, frames, {0, 5, 9});
  REQUIRE(p.shape == Shape{3, 4});
  for (int64_t b = 0; b < 3; ++b) {
    double row = 0.0;
    for (int64_t c = 0; c < 4; ++c) {
      CHECK(p[b * 4 + c] >= 0.0);
      row += p[b * 4 + c];
    }
    CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
  }
}

}  // TEST_SUITE
