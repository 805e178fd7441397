#include "dyco/fewshot.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <stdexcept>

#include "dyco/pretrain.hpp"
#include "dyco/rng.hpp"
#include "json.hpp"

namespace dyco {

FewShotSplit make_split(const std::vector<IQFrame>& frames, int64_t n_shots, uint64_t seed) {
  if (n_shots < 1) throw std::invalid_argument("make_split: n_shots must be >= 1");
  std::map<std::pair<uint16_t, int16_t>, std::vector<int64_t>> cells;
  for (int64_t i = 0; i < static_cast<int64_t>(frames.size()); ++i)
    cells[{frames[static_cast<size_t>(i)].label, frames[static_cast<size_t>(i)].snr_db}].push_back(i);

  FewShotSplit split;
  split.n_shots = n_shots;
  split.seed = seed;
  for (auto& [key, idx] : cells) {
    if (static_cast<int64_t>(idx.size()) < n_shots + 1)
      throw std::invalid_argument("make_split: cell (class=" + std::to_string(key.first) +
                                  ", snr=" + std::to_string(key.second) + ") has " +
                                  std::to_string(idx.size()) + " frames, need " + std::to_string(n_shots + 1));
    Rng rng = Rng::stream(seed, {0x73706c74ULL, key.first, static_cast<uint64_t>(static_cast<uint16_t>(key.second))});
    for (int64_t i = static_cast<int64_t>(idx.size()) - 1; i > 0; --i)
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(rng.uniform_int(0, i))]);
    for (int64_t i = 0; i < static_cast<int64_t>(idx.size()); ++i)
      (i < n_shots ? split.support : split.query).push_back(idx[static_cast<size_t>(i)]);
  }
  std::sort(split.support.begin(), split.support.end());
  std::sort(split.query.begin(), split.query.end());
  return split;
}

Tensor predict_probs(const ClassifierModel& model, const std::vector<IQFrame>& frames,
                     const std::vector<int64_t>& indices) {
  std::vector<PriorFeatures> feats(indices.size());
  for (size_t b = 0; b < indices.size(); ++b)
    feats[b] = extract_priors(frames[static_cast<size_t>(indices[b])]);
  PriorInput in = priors_to_tensors(feats);
  Tensor hc = contrast_features(frames, indices, model.backbone_params, model.backbone_cfg,
                                model.contrast_from_projection);
  Tape tape;
  BoundParams bp = bind_params(tape, model.fusion_params, false);
  return fusion_forward(tape, in, tape.leaf(hc, false), bp, model.fusion_cfg).detached();
}

EvalReport evaluate(const ClassifierModel& model, const std::vector<IQFrame>& frames,
                    const FewShotSplit& split) {
  int64_t C = model.fusion_cfg.num_classes;
  EvalReport rep;
  rep.num_classes = C;
  rep.n_shots = split.n_shots;
  rep.seed = split.seed;
  rep.confusion.assign(static_cast<size_t>(C * C), 0);

  std::map<int16_t, std::pair<int64_t, int64_t>> by_snr;  // snr -> (correct, total)
  const int64_t chunk = 64;  // bound peak memory on large query sets
  for (size_t start = 0; start < split.query.size(); start += chunk) {
    std::vector<int64_t> batch(split.query.begin() + static_cast<int64_t>(start),
                               split.query.begin() + std::min(start + chunk, split.query.size()));
    Tensor probs = predict_probs(model, frames, batch);
    for (size_t b = 0; b < batch.size(); ++b) {
      int64_t pred = 0;
      for (int64_t c = 1; c < C; ++c)
        if (probs[static_cast<int64_t>(b) * C + c] > probs[static_cast<int64_t>(b) * C + pred]) pred = c;
      const IQFrame& f = frames[static_cast<size_t>(batch[b])];
      ++rep.confusion[static_cast<size_t>(f.label * C + pred)];
      auto& [correct, total] = by_snr[f.snr_db];
      ++total;
      if (pred == f.label) ++correct;
    }
  }
  int64_t correct = 0, total = 0;
  for (auto& [snr, ct] : by_snr) {
    rep.per_snr.emplace_back(snr, static_cast<double>(ct.first) / static_cast<double>(ct.second));
    correct += ct.first;
    total += ct.second;
  }
  rep.accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return rep;
}

std::vector<std::pair<int16_t, double>> snr_curve(const EvalReport& report) { return report.per_snr; }

std::string snr_curve_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "snr_db,accuracy\n";
  for (auto& [snr, acc] : report.per_snr) os << snr << "," << acc << "\n";
  return os.str();
}

std::string EvalReport::confusion_csv() const {
  std::ostringstream os;
  for (int64_t r = 0; r < num_classes; ++r) {
    for (int64_t c = 0; c < num_classes; ++c)
      os << confusion[static_cast<size_t>(r * num_classes + c)] << (c + 1 < num_classes ? "," : "\n");
  }
  return os.str();
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["accuracy"] = accuracy;
  j["n_shots"] = n_shots;
  j["seed"] = seed;
  j["num_classes"] = num_classes;
  nlohmann::json snrs = nlohmann::json::array();
  for (auto& [snr, acc] : per_snr) snrs.push_back({{"snr_db", snr}, {"accuracy", acc}});
  j["per_snr"] = snrs;
  j["confusion"] = confusion;
  return j.dump(2);
}

}  // namespace dyco
