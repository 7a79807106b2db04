#include "arv/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "arv/checkpoint.hpp"
#include "arv/config.hpp"
#include "arv/costmodel.hpp"
#include "arv/pipeline.hpp"
#include "arv/trainer.hpp"

namespace arv {

namespace {

namespace fs = std::filesystem;

void log_event(const std::string& line) { std::cerr << "event=" << line << "\n"; }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw io_error(cat("cannot open for writing: ", path));
  f << text;
  if (!f) throw io_error(cat("write failed: ", path));
}

// Seed precedence: --seed flag > config file > default 0.
TrainConfig resolve_config(const std::string& config_path, bool seed_given, uint64_t seed) {
  TrainConfig cfg = config_path.empty() ? TrainConfig{} : load_config_file(config_path);
  if (seed_given) cfg.seed = seed;
  return cfg;
}

void announce(const TrainConfig& cfg) {
  log_event(cat("resolved_seed seed=", cfg.seed));
  std::istringstream in(serialize_config(cfg));
  std::string line;
  while (std::getline(in, line)) log_event(cat("config ", line));
}

std::string mask_csv(const BoolMatrix& m) {
  std::ostringstream os;
  for (int64_t r = 0; r < m.rows; ++r) {
    for (int64_t c = 0; c < m.cols; ++c) {
      if (c) os << ",";
      os << (m.at(r, c) ? 1 : 0);
    }
    os << "\n";
  }
  return os.str();
}

void write_mask_pgm(const std::string& path, const BoolMatrix& m) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw io_error(cat("cannot open for writing: ", path));
  f << "P5\n" << m.cols << " " << m.rows << "\n255\n";
  for (uint8_t b : m.data) f.put(static_cast<char>(b ? 255 : 0));
}

int cmd_gen_data(const std::string& out_dir, int64_t count, const TrainConfig& cfg) {
  fs::create_directories(out_dir);
  const MotionTaskSpec spec = cfg.motion_spec();
  std::ostringstream labels;
  labels << "index,label,file\n";
  for (int64_t i = 0; i < count; ++i) {
    const LabeledVideo lv = generate_moving_shape(spec, i);
    char name[64];
    std::snprintf(name, sizeof(name), "video_%05lld.arvv", static_cast<long long>(i));
    write_video_file((fs::path(out_dir) / name).string(), lv.video);
    labels << i << "," << lv.label << "," << name << "\n";
  }
  write_text((fs::path(out_dir) / "labels.csv").string(), labels.str());
  log_event(cat("gen_data_done count=", count, " dir=", out_dir));
  return 0;
}

int cmd_pretrain(const TrainConfig& cfg, const std::string& out_ckpt,
                 const std::string& metrics_path, const std::string& resume_path,
                 int64_t halt_step, int threads) {
  Checkpoint resume;
  const bool resuming = !resume_path.empty();
  if (resuming) resume = load_checkpoint(resume_path);
  PretrainOutcome out = run_pretrain(cfg, halt_step, resuming ? &resume : nullptr, threads);
  if (!metrics_path.empty()) write_text(metrics_path, metrics_csv(out.metrics));
  if (!out_ckpt.empty()) save_checkpoint(out_ckpt, out.checkpoint);
  log_event(cat("pretrain_done steps=", out.metrics.size(), " initial_loss=", out.initial_loss,
                " final_loss=", out.final_loss));
  std::cout << "initial_loss=" << out.initial_loss << " final_loss=" << out.final_loss << "\n";
  return 0;
}

int cmd_probe(const TrainConfig& cfg, const std::string& ckpt_path, const std::string& mode_name,
              bool random_init) {
  const ProbeMode mode = mode_name == "full" ? ProbeMode::Full : ProbeMode::Linear;
  ProbeResult res;
  if (random_init) {
    res = run_probe_random_init(cfg, mode);
  } else {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    res = run_probe(cfg, ckpt, mode);
  }
  log_event(cat("probe_done mode=", mode_name, " random_init=", random_init,
                " accuracy=", res.accuracy));
  char buf[96];
  std::snprintf(buf, sizeof(buf), "top1_accuracy=%.6f correct=%lld total=%lld\n", res.accuracy,
                static_cast<long long>(res.correct), static_cast<long long>(res.total));
  std::cout << buf;
  return 0;
}

int cmd_layout_dump(const TrainConfig& cfg, const std::string& out_dir, const std::string& format,
                    bool stats) {
  fs::create_directories(out_dir);
  const LabeledVideo sample = generate_moving_shape(cfg.motion_spec(), 0);
  const auto pipe = build_sample_pipeline<float>(cfg, sample.video, layout_seed_for(cfg.seed, 0, 0));
  if (format == "csv") {
    write_text((fs::path(out_dir) / "enc_mask.csv").string(), mask_csv(pipe.plan.enc_mask));
    write_text((fs::path(out_dir) / "cross_mask.csv").string(), mask_csv(pipe.plan.cross_mask));
  } else if (format == "pgm") {
    write_mask_pgm((fs::path(out_dir) / "enc_mask.pgm").string(), pipe.plan.enc_mask);
    write_mask_pgm((fs::path(out_dir) / "cross_mask.pgm").string(), pipe.plan.cross_mask);
  } else {
    throw config_error(cat("layout-dump: unknown format '", format, "'"));
  }
  if (stats) {
    std::ostringstream os;
    os << "cube,mean,std\n";
    char buf[96];
    for (int64_t i = 0; i < pipe.targets.n_tokens; ++i) {
      std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g\n", static_cast<long long>(i),
                    static_cast<double>(pipe.targets.means[static_cast<size_t>(i)]),
                    static_cast<double>(pipe.targets.stds[static_cast<size_t>(i)]));
      os << buf;
    }
    write_text((fs::path(out_dir) / "cube_stats.csv").string(), os.str());
  }
  log_event(cat("layout_dump_done enc_len=", pipe.plan.enc_len(), " dec_len=",
                pipe.plan.dec_len(), " dir=", out_dir));
  return 0;
}

int cmd_rank_report(const std::string& ckpt_path, const std::string& data_dir,
                    const std::string& out_csv, int64_t max_samples) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const TrainConfig& cfg = ckpt.config;
  announce(cfg);
  if (cfg.precision != Precision::F32)
    throw config_error("rank-report: only f32 checkpoints are supported");
  ModelParams<float> params = decode_params_blob<float>(ckpt.params_blob);
  const ModelConfig mcfg = cfg.model_config();

  VideoCorpus corpus = data_dir.empty() ? build_corpus(cfg.motion_spec(), std::min<int64_t>(
                                              max_samples, cfg.data_count))
                                        : load_corpus_dir(data_dir);
  if (static_cast<int64_t>(corpus.items.size()) > max_samples)
    corpus.items.resize(static_cast<size_t>(max_samples));

  std::vector<AttentionRecord<float>> records;
  for (size_t i = 0; i < corpus.items.size(); ++i) {
    const auto pipe = build_sample_pipeline<float>(cfg, corpus.items[i].video,
                                                   layout_seed_for(cfg.seed, 0, static_cast<int64_t>(i)));
    Tape<float> tape;
    ParamsOnTape<float> w = put_params_on_tape(tape, params, false);
    ValueId grid_leaf = put_grid_on_tape(tape, pipe.grid, false);
    AttentionRecord<float> rec;
    encode(tape, w, params, mcfg, pipe.plan, grid_leaf, &rec);
    records.push_back(std::move(rec));
  }
  const auto summary = attention_rank_report(records, mcfg.rank_tol_factor);
  std::ostringstream os;
  os << "layer,mean_rank,min,max\n";
  char buf[96];
  for (const auto& s : summary) {
    std::snprintf(buf, sizeof(buf), "%d,%.4f,%lld,%lld\n", s.layer, s.mean_rank,
                  static_cast<long long>(s.min_rank), static_cast<long long>(s.max_rank));
    os << buf;
  }
  write_text(out_csv, os.str());
  log_event(cat("rank_report_done samples=", corpus.items.size(), " out=", out_csv));
  return 0;
}

int cmd_cost_report(const std::vector<std::string>& config_paths, const std::string& out_csv) {
  std::vector<CostReport> reports;
  for (const auto& path : config_paths) {
    const TrainConfig cfg = load_config_file(path);
    log_event(cat("cost_config path=", path));
    reports.push_back(attention_cost(cfg.cost_config(fs::path(path).stem().string())));
  }
  const std::string csv = cost_report_csv(reports);
  if (out_csv.empty())
    std::cout << csv;
  else
    write_text(out_csv, csv);
  log_event(cat("cost_report_done configs=", config_paths.size()));
  return 0;
}

int cmd_gradcheck(const TrainConfig& cfg, int64_t coords, uint64_t seed) {
  const GradcheckResult res = run_gradcheck(cfg, coords, seed);
  char buf[128];
  std::snprintf(buf, sizeof(buf), "gradcheck coords=%lld max_rel_err=%.3e pass=%s\n",
                static_cast<long long>(res.coords), res.max_rel_err, res.pass ? "yes" : "no");
  std::cout << buf;
  log_event(cat("gradcheck_done pass=", res.pass));
  if (!res.pass) throw numeric_error("gradcheck failed");
  return 0;
}

}  // namespace

int cli_run(int argc, const char* const* argv) {
  CLI::App app{"Autoregressive video pretraining at desk scale"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "data", out_ckpt, metrics_path, resume_path;
  std::string ckpt_path, mode_name = "linear", format = "csv", data_dir, out_csv;
  std::vector<std::string> cost_configs;
  uint64_t seed = 0;
  bool seed_given = false, random_init = false, stats = false;
  int64_t count = 64, halt_step = -1, coords = 20, max_samples = 8;
  int threads = 1;
  int32_t frames = 0, size = 0;

  auto add_seed = [&](CLI::App* cmd) { cmd->add_option("--seed", seed, "Seed override"); };

  int32_t shape_size = 0;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic labeled video corpus");
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--count", count, "Number of videos");
  gen->add_option("--frames", frames, "Frames per video");
  gen->add_option("--size", size, "Square frame size in pixels");
  gen->add_option("--shape-size", shape_size, "Moving square side in pixels");
  gen->add_option("--config", config_path, "Config file");
  add_seed(gen);

  auto* pre = app.add_subcommand("pretrain", "Run the pretraining loop");
  pre->add_option("--config", config_path, "Config file")->required();
  pre->add_option("--out", out_ckpt, "Checkpoint output path");
  pre->add_option("--metrics", metrics_path, "Metrics CSV output path");
  pre->add_option("--resume", resume_path, "Resume from checkpoint");
  pre->add_option("--halt-step", halt_step, "Stop after this step (for resume tests)");
  pre->add_option("--threads", threads, "Worker thread cap (1 = single-threaded)");
  add_seed(pre);

  auto* probe = app.add_subcommand("probe", "Train and evaluate a classifier probe");
  probe->add_option("--config", config_path, "Config file")->required();
  probe->add_option("--checkpoint", ckpt_path, "Pretrained checkpoint");
  probe->add_option("--mode", mode_name, "linear|full")
      ->check(CLI::IsMember({"linear", "full"}));
  probe->add_flag("--random-init", random_init, "Probe a fresh random encoder instead");
  add_seed(probe);

  auto* dump = app.add_subcommand("layout-dump", "Emit attention masks for inspection");
  dump->add_option("--config", config_path, "Config file")->required();
  dump->add_option("--out", out_dir, "Output directory")->required();
  dump->add_option("--format", format, "csv|pgm")->check(CLI::IsMember({"csv", "pgm"}));
  dump->add_flag("--stats", stats, "Also emit per-cube mean/std CSV");
  add_seed(dump);

  auto* rank = app.add_subcommand("rank-report", "Attention-rank diagnostic per layer");
  rank->add_option("--checkpoint", ckpt_path, "Checkpoint path")->required();
  rank->add_option("--data", data_dir, "Directory of .arvv files (default: synthesize)");
  rank->add_option("--out", out_csv, "Output CSV path")->required();
  rank->add_option("--samples", max_samples, "Number of samples");

  auto* cost = app.add_subcommand("cost-report", "Analytical sequence-length/FLOPs report");
  cost->add_option("--config", cost_configs, "Config file (repeatable)")->required();
  cost->add_option("--out", out_csv, "Output CSV path (default: stdout)");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the full loss");
  grad->add_option("--config", config_path, "Config file");
  grad->add_option("--params", coords, "Number of random parameters to probe");
  add_seed(grad);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  for (CLI::App* sub : {gen, pre, probe, dump, grad})
    if (sub->parsed() && sub->count("--seed") > 0) seed_given = true;

  try {
    if (gen->parsed()) {
      TrainConfig cfg = resolve_config(config_path, seed_given, seed);
      if (frames > 0) cfg.frames = frames;
      if (size > 0) cfg.height = cfg.width = size;
      if (shape_size > 0) cfg.shape_size = shape_size;
      cfg.data_seed = seed_given ? seed : cfg.data_seed;
      validate(cfg.motion_spec());
      announce(cfg);
      return cmd_gen_data(out_dir, count, cfg);
    }
    if (pre->parsed()) {
      TrainConfig cfg = resolve_config(config_path, seed_given, seed);
      cfg.validate_all();
      announce(cfg);
      return cmd_pretrain(cfg, out_ckpt, metrics_path, resume_path, halt_step, threads);
    }
    if (probe->parsed()) {
      TrainConfig cfg = resolve_config(config_path, seed_given, seed);
      cfg.validate_all();
      announce(cfg);
      if (!random_init && ckpt_path.empty())
        throw config_error("probe: --checkpoint required unless --random-init");
      return cmd_probe(cfg, ckpt_path, mode_name, random_init);
    }
    if (dump->parsed()) {
      TrainConfig cfg = resolve_config(config_path, seed_given, seed);
      cfg.validate_all();
      announce(cfg);
      return cmd_layout_dump(cfg, out_dir, format, stats);
    }
    if (rank->parsed()) return cmd_rank_report(ckpt_path, data_dir, out_csv, max_samples);
    if (cost->parsed()) return cmd_cost_report(cost_configs, out_csv);
    if (grad->parsed()) {
      TrainConfig cfg = resolve_config(config_path, seed_given, seed);
      announce(cfg);
      return cmd_gradcheck(cfg, coords, seed_given ? seed : cfg.seed);
    }
    return 1;
  } catch (const config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const parse_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace arv
