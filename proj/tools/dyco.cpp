// Command-line front end: synthesis, pretraining, few-shot fine-tuning,
// evaluation, theory checks, and plot-data export.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "dyco/bench.hpp"
#include "dyco/checkpoint.hpp"
#include "dyco/fewshot.hpp"
#include "dyco/fusion.hpp"
#include "dyco/pretrain.hpp"
#include "dyco/signal.hpp"
#include "dyco/verify.hpp"
#include "json.hpp"

namespace {

using dyco::ParamMap;
using dyco::Tensor;
using nlohmann::json;

// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical abort.
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

int threads_cap() {
  // Modules run sequentially; the cap is accepted and validated for
  // interface stability.
  const char* env = std::getenv("DYCO_THREADS");
  if (!env) return static_cast<int>(std::thread::hardware_concurrency());
  int v = std::atoi(env);
  if (v < 1) throw std::invalid_argument("DYCO_THREADS must be a positive integer");
  return v;
}

std::vector<dyco::ModClass> parse_classes(const std::string& csv) {
  std::vector<dyco::ModClass> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(dyco::mod_class_from_name(tok));
  if (out.empty()) throw std::invalid_argument("no modulation classes given");
  return out;
}

std::vector<int> parse_ints(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << content;
}

// Config file handling: JSON objects, unknown keys rejected, CLI flags win.
json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config " + path + ": " + e.what());
  }
}

void apply_pretrain_config(const json& j, dyco::PretrainConfig& cfg) {
  for (auto& [key, val] : j.items()) {
    if (key == "epsilon") cfg.epsilon = val;
    else if (key == "xi") cfg.xi = val;
    else if (key == "lambda_sc") cfg.lambda_sc = val;
    else if (key == "tau") cfg.tau = val;
    else if (key == "momentum") cfg.momentum = val;
    else if (key == "power_iters") cfg.power_iters = val;
    else if (key == "epochs") cfg.epochs = val;
    else if (key == "batch_size") cfg.batch_size = val;
    else if (key == "lr") cfg.lr = val;
    else if (key == "weight_decay") cfg.weight_decay = val;
    else if (key == "clip_norm") cfg.clip_norm = val;
    else if (key == "seed") cfg.seed = val;
    else if (key == "use_vaa") cfg.use_vaa = val;
    else if (key == "policy") cfg.policy = dyco::AugmentPolicy::from_json(val.dump());
    else throw std::runtime_error("unknown config key \"" + key + "\"");
  }
}

// Pretraining state round-trips through one container: query/key parameter
// maps plus optimizer moments and step counters.
void save_pretrain_state(const dyco::PretrainState& st, const std::string& path) {
  ParamMap all;
  for (const auto& [k, v] : st.theta_q) all.emplace("q." + k, v);
  for (const auto& [k, v] : st.theta_k) all.emplace("k." + k, v);
  for (const auto& [k, v] : st.opt.m) all.emplace("opt.m." + k, v);
  for (const auto& [k, v] : st.opt.v) all.emplace("opt.v." + k, v);
  Tensor meta = Tensor::zeros({2});
  (*meta.data)[0] = static_cast<double>(st.global_step);
  (*meta.data)[1] = static_cast<double>(st.opt.step);
  all.emplace("meta.counters", meta);
  dyco::save_checkpoint(all, path);
}

void load_pretrain_state(dyco::PretrainState& st, const std::string& path) {
  ParamMap all = dyco::load_checkpoint(path);
  st.theta_q.clear();
  st.theta_k.clear();
  st.opt.m.clear();
  st.opt.v.clear();
  for (const auto& [k, v] : all) {
    if (k.rfind("q.", 0) == 0) st.theta_q.emplace(k.substr(2), v);
    else if (k.rfind("k.", 0) == 0) st.theta_k.emplace(k.substr(2), v);
    else if (k.rfind("opt.m.", 0) == 0) st.opt.m.emplace(k.substr(6), v);
    else if (k.rfind("opt.v.", 0) == 0) st.opt.v.emplace(k.substr(6), v);
    else if (k == "meta.counters") {
      st.global_step = static_cast<int64_t>((*v.data)[0]);
      st.opt.step = static_cast<int64_t>((*v.data)[1]);
    } else {
      throw std::runtime_error(path + ": unexpected tensor \"" + k + "\"");
    }
  }
  if (st.theta_q.empty()) throw std::runtime_error(path + ": no query-encoder tensors");
}

ParamMap load_backbone_query_params(const std::string& path) {
  ParamMap all = dyco::load_checkpoint(path);
  ParamMap q;
  for (const auto& [k, v] : all)
    if (k.rfind("q.", 0) == 0) q.emplace(k.substr(2), v);
  if (q.empty()) throw std::runtime_error(path + ": no query-encoder tensors");
  return q;
}

int run(int argc, char** argv) {
  CLI::App app{"dyco: dynamic-consistency contrastive learning for modulation recognition"};
  app.require_subcommand(1);
  threads_cap();

  // synth
  auto* synth = app.add_subcommand("synth", "generate a frame dataset");
  std::string s_classes = "bpsk,qpsk,8psk,16qam,2fsk,4fsk,am-dsb,tone";
  std::string s_snrs = "0,10,20", s_out;
  int64_t s_per = 100, s_len = 128;
  uint64_t s_seed = 0;
  synth->add_option("--classes", s_classes, "comma-separated class names");
  synth->add_option("--per-class", s_per, "frames per class per SNR");
  synth->add_option("--snrs", s_snrs, "comma-separated SNRs in dB");
  synth->add_option("--length", s_len, "samples per frame");
  synth->add_option("--seed", s_seed, "RNG seed");
  synth->add_option("--out", s_out, "output frame file")->required();

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "contrastive pretraining");
  std::string p_data, p_config, p_out, p_resume, p_log;
  int64_t p_epochs = -1;
  uint64_t p_seed = 0;
  bool p_seed_set = false;
  pre->add_option("--data", p_data, "input frame file")->required();
  pre->add_option("--config", p_config, "JSON config file");
  pre->add_option("--epochs", p_epochs, "override epoch count");
  pre->add_option("--seed", p_seed, "RNG seed")->each([&](const std::string&) { p_seed_set = true; });
  pre->add_option("--resume", p_resume, "checkpoint to resume from");
  pre->add_option("--log", p_log, "JSONL training log path");
  pre->add_option("--out-ckpt", p_out, "output checkpoint")->required();

  // fewshot
  auto* few = app.add_subcommand("fewshot", "few-shot fine-tuning of the fusion stack");
  std::string f_data, f_ckpt, f_out;
  int64_t f_n = 10, f_steps = 100;
  uint64_t f_seed = 0;
  bool f_concat = false, f_proj = false;
  few->add_option("--data", f_data, "input frame file")->required();
  few->add_option("--ckpt", f_ckpt, "pretrained encoder checkpoint")->required();
  few->add_option("--n", f_n, "support frames per class per SNR");
  few->add_option("--steps", f_steps, "fine-tuning steps");
  few->add_option("--seed", f_seed, "RNG seed");
  few->add_flag("--concat-fusion", f_concat, "plain concatenation instead of gating/attention");
  few->add_flag("--contrast-projection", f_proj, "use the projection head output as the contrast feature");
  few->add_option("--out-ckpt", f_out, "output fusion checkpoint")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a fine-tuned model");
  std::string e_data, e_ckpt, e_fusion, e_report;
  uint64_t e_seed = 0;
  int64_t e_n = 10;
  ev->add_option("--data", e_data, "input frame file")->required();
  ev->add_option("--ckpt", e_ckpt, "pretrained encoder checkpoint")->required();
  ev->add_option("--fusion-ckpt", e_fusion, "fusion checkpoint")->required();
  ev->add_option("--n", e_n, "support size used for the split");
  ev->add_option("--seed", e_seed, "split seed");
  ev->add_option("--report", e_report, "output report JSON path")->required();

  // verify
  auto* ver = app.add_subcommand("verify", "run theory checks");
  std::string v_check = "all", v_dir;
  int64_t v_trials = 0;
  uint64_t v_seed = 0;
  ver->add_option("--check", v_check, "check name or \"all\"");
  ver->add_option("--trials", v_trials, "trial count override (0 = default)");
  ver->add_option("--seed", v_seed, "RNG seed");
  ver->add_option("--report-dir", v_dir, "directory for per-check JSON reports");

  // plot-data
  auto* plot = app.add_subcommand("plot-data", "export plot-ready CSV");
  std::string pl_report, pl_kind, pl_out;
  plot->add_option("--report", pl_report, "eval report JSON or training log JSONL")->required();
  plot->add_option("--kind", pl_kind, "snr_curve|confusion|loss")->required();
  plot->add_option("--out", pl_out, "output CSV (default stdout)");

  // bench
  auto* ben = app.add_subcommand("bench", "micro-benchmark numerical kernels");
  std::string b_kernel = "fft", b_out;
  int64_t b_size = 128, b_reps = 20;
  uint64_t b_seed = 0;
  ben->add_option("--kernel", b_kernel, "fft|conv1d|window_attention|spectral_norm");
  ben->add_option("--size", b_size, "problem size");
  ben->add_option("--reps", b_reps, "timed repetitions");
  ben->add_option("--seed", b_seed, "RNG seed");
  ben->add_option("--out", b_out, "output CSV (default stdout)");

  // regen-fixtures
  auto* regen = app.add_subcommand("regen-fixtures", "rebuild golden oracle fixtures");
  std::string r_dir;
  uint64_t r_seed = 42;
  regen->add_option("--dir", r_dir, "fixture directory")->required();
  regen->add_option("--seed", r_seed, "RNG seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);  // prints help or the error message
    return code == 0 ? 0 : kExitUsage;
  }

  if (*synth) {
    dyco::DatasetSpec spec;
    spec.classes = parse_classes(s_classes);
    spec.snrs_db = parse_ints(s_snrs);
    spec.frames_per_class_per_snr = s_per;
    spec.length = s_len;
    auto frames = dyco::synth_dataset(spec, s_seed);
    dyco::write_frames(frames, s_out);
    std::cout << frames.size() << " frames -> " << s_out << "\n";
    return 0;
  }

  if (*pre) {
    dyco::PretrainConfig cfg;
    if (!p_config.empty()) apply_pretrain_config(load_config(p_config), cfg);
    if (p_epochs >= 0) cfg.epochs = p_epochs;
    if (p_seed_set) cfg.seed = p_seed;
    dyco::BackboneConfig bc;
    auto frames = dyco::read_frames(p_data);
    dyco::PretrainState st = dyco::init_pretrain(bc, cfg);
    if (!p_resume.empty()) load_pretrain_state(st, p_resume);
    std::ofstream log;
    if (!p_log.empty()) {
      log.open(p_log, st.global_step > 0 ? std::ios::app : std::ios::out);
      if (!log) throw std::runtime_error("cannot open log " + p_log);
    }
    dyco::pretrain(st, frames, p_log.empty() ? nullptr : &log);
    save_pretrain_state(st, p_out);
    json manifest{{"global_step", st.global_step},
                  {"epochs", cfg.epochs},
                  {"lambda_sc", cfg.lambda_sc},
                  {"tau", cfg.tau},
                  {"momentum", cfg.momentum},
                  {"epsilon", cfg.epsilon},
                  {"use_vaa", cfg.use_vaa},
                  {"seed", cfg.seed}};
    write_text(p_out + ".json", manifest.dump(2) + "\n");
    std::cout << "pretrained " << st.global_step << " steps -> " << p_out << "\n";
    return 0;
  }

  if (*few) {
    auto frames = dyco::read_frames(f_data);
    ParamMap backbone = load_backbone_query_params(f_ckpt);
    dyco::BackboneConfig bc;
    dyco::FusionConfig fc;
    fc.use_gating = !f_concat;
    fc.use_attention = !f_concat;
    if (f_proj) fc.contrast_dim = bc.proj_dim;
    dyco::FinetuneConfig ft;
    ft.seed = f_seed;
    ft.steps = f_steps;
    ft.contrast_from_projection = f_proj;
    dyco::FewShotSplit split = dyco::make_split(frames, f_n, f_seed);
    dyco::FinetuneResult res = dyco::finetune_fewshot(frames, split.support, backbone, bc, fc, ft);
    dyco::save_checkpoint(res.params, f_out);
    json manifest{{"n", f_n},
                  {"seed", f_seed},
                  {"steps", ft.steps},
                  {"concat_fusion", f_concat},
                  {"contrast_projection", f_proj},
                  {"final_loss", res.loss_curve.back()}};
    write_text(f_out + ".json", manifest.dump(2) + "\n");
    std::cout << "fine-tuned on " << split.support.size() << " support frames -> " << f_out << "\n";
    return 0;
  }

  if (*ev) {
    auto frames = dyco::read_frames(e_data);
    dyco::ClassifierModel model;
    model.backbone_params = load_backbone_query_params(e_ckpt);
    model.fusion_params = dyco::load_checkpoint(e_fusion);
    std::ifstream mf(e_fusion + ".json");
    if (mf) {
      json manifest = json::parse(mf);
      model.fusion_cfg.use_gating = !manifest.value("concat_fusion", false);
      model.fusion_cfg.use_attention = model.fusion_cfg.use_gating;
      model.contrast_from_projection = manifest.value("contrast_projection", false);
      if (model.contrast_from_projection) model.fusion_cfg.contrast_dim = model.backbone_cfg.proj_dim;
    }
    dyco::FewShotSplit split = dyco::make_split(frames, e_n, e_seed);
    dyco::EvalReport rep = dyco::evaluate(model, frames, split);
    json j = json::parse(rep.to_json());
    j["class_names"] = dyco::mod_class_names();
    write_text(e_report, j.dump(2) + "\n");
    std::filesystem::path base(e_report);
    write_text(base.replace_extension("").string() + "_snr.csv", dyco::snr_curve_csv(rep));
    write_text(base.replace_extension("").string() + "_confusion.csv", rep.confusion_csv());
    std::cout << "accuracy " << rep.accuracy << " over " << split.query.size() << " query frames\n";
    return 0;
  }

  if (*ver) {
    std::vector<dyco::VerifyReport> reports;
    if (v_check == "all") {
      reports = dyco::run_all_checks(v_seed);
    } else {
      try {
        reports.push_back(dyco::run_check(v_check, v_trials, v_seed));
      } catch (const std::invalid_argument& e) {
        std::cerr << e.what() << "\n";
        return kExitUsage;
      }
    }
    bool all_pass = true;
    for (const auto& r : reports) {
      std::cout << r.to_json() << "\n";
      if (!v_dir.empty()) {
        std::filesystem::create_directories(v_dir);
        write_text(v_dir + "/" + r.check + ".json", r.to_json() + "\n");
      }
      all_pass = all_pass && r.pass;
    }
    if (!v_dir.empty()) write_text(v_dir + "/summary.csv", dyco::verify_summary_csv(reports));
    std::cout << dyco::verify_summary_csv(reports);
    return all_pass ? 0 : kExitData;
  }

  if (*plot) {
    std::ostringstream csv;
    if (pl_kind == "snr_curve") {
      json rep = load_config(pl_report);
      csv << "snr_db,accuracy\n";
      for (const auto& p : rep.at("per_snr")) csv << p.at("snr_db").get<int>() << "," << p.at("accuracy").get<double>() << "\n";
    } else if (pl_kind == "confusion") {
      json rep = load_config(pl_report);
      auto names = rep.at("class_names").get<std::vector<std::string>>();
      auto conf = rep.at("confusion").get<std::vector<int64_t>>();
      int64_t C = rep.at("num_classes").get<int64_t>();
      for (int64_t c = 0; c < C; ++c) csv << names[static_cast<size_t>(c)] << (c + 1 < C ? "," : "\n");
      for (int64_t r = 0; r < C; ++r)
        for (int64_t c = 0; c < C; ++c)
          csv << conf[static_cast<size_t>(r * C + c)] << (c + 1 < C ? "," : "\n");
    } else if (pl_kind == "loss") {
      std::ifstream in(pl_report);
      if (!in) throw std::runtime_error("cannot open " + pl_report);
      csv << "step,l_total\n";
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        csv << j.at("step").get<int64_t>() << "," << j.at("l_total").get<double>() << "\n";
      }
    } else {
      std::cerr << "unknown kind \"" << pl_kind << "\"; valid: snr_curve, confusion, loss\n";
      return kExitUsage;
    }
    if (pl_out.empty()) std::cout << csv.str();
    else write_text(pl_out, csv.str());
    return 0;
  }

  if (*ben) {
    dyco::BenchReport rep;
    try {
      rep = dyco::run_bench(b_kernel, b_size, b_reps, b_seed);
    } catch (const std::invalid_argument& e) {
      std::cerr << e.what() << "\n";
      return kExitUsage;
    }
    std::string csv = dyco::bench_csv({rep});
    if (b_out.empty()) std::cout << csv;
    else write_text(b_out, csv);
    return 0;
  }

  if (*regen) {
    dyco::regen_fixtures(r_dir, r_seed);
    std::cout << "fixtures regenerated under " << r_dir << "\n";
    return 0;
  }

  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const dyco::NumericalAbort& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
