#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "arv/cli.hpp"
#include "arv/trainer.hpp"
#include "arv/videodata.hpp"

using namespace arv;
namespace fs = std::filesystem;

namespace {

int run_cli(std::vector<std::string> args) {
  std::vector<const char*> argv;
  argv.push_back("arv");
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  REQUIRE(f.good());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

fs::path tmp_dir(const char* name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Tiny config file for fast CLI runs.
fs::path write_tiny_config(const fs::path& dir, int64_t steps) {
  const fs::path p = dir / "tiny.cfg";
  std::ofstream f(p);
  f << "frames = 4\nheight = 16\nwidth = 16\nchannels = 1\n"
    << "shape_size = 6\nspeed = 1\ncube_t = 2\ncube_h = 4\ncube_w = 4\n"
    << "cluster_t = 1\ncluster_h = 2\ncluster_w = 2\n"
    << "embed_dim = 24\nnum_heads = 2\nenc_depth = 1\ndec_width = 24\ndec_depth = 1\n"
    << "data_count = 8\nsteps = " << steps << "\nbatch_size = 2\nwarmup_steps = 2\n"
    << "probe_count = 100\nprobe_steps = 40\nseed = 5\n";
  return p;
}

}  // namespace

TEST_CASE("unknown subcommands and flags are usage errors (exit 1)") {
  CHECK(run_cli({"no-such-command"}) == 1);
  CHECK(run_cli({"cost-report", "--bogus-flag", "x"}) == 1);
  CHECK(run_cli({"pretrain"}) == 1);  // missing required --config
}

TEST_CASE("unknown config keys are rejected with exit 1") {
  const fs::path dir = tmp_dir("arv_cli_badcfg");
  const fs::path cfg = dir / "bad.cfg";
  std::ofstream(cfg) << "no_such_key = 1\n";
  CHECK(run_cli({"pretrain", "--config", cfg.string()}) == 1);
}

TEST_CASE("gen-data writes a corpus with round-robin labels") {
  const fs::path dir = tmp_dir("arv_cli_gendata");
  // invalid geometry (default shape no longer fits) is a usage error
  CHECK(run_cli({"gen-data", "--out", dir.string(), "--count", "1", "--size", "16"}) == 1);
  CHECK(run_cli({"gen-data", "--out", dir.string(), "--count", "6", "--frames", "4", "--size",
                 "16", "--shape-size", "6", "--seed", "3"}) == 0);
  for (int i = 0; i < 6; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "video_%05d.arvv", i);
    CHECK(fs::exists(dir / name));
  }
  const std::string labels = slurp(dir / "labels.csv");
  CHECK(labels.find("index,label,file") == 0);
  CHECK(labels.find("0,0,video_00000.arvv") != std::string::npos);
  CHECK(labels.find("5,5,video_00005.arvv") != std::string::npos);
  const VideoTensor v = read_video_file((dir / "video_00000.arvv").string());
  CHECK(v.t_frames == 4);
  CHECK(v.height == 16);
}

TEST_CASE("cost-report reproduces the reference length table") {
  const fs::path dir = tmp_dir("arv_cli_cost");
  const fs::path out = dir / "cost.csv";
  const std::string a = std::string(ARV_SOURCE_DIR) + "/configs/fullscale_cluster.cfg";
  const std::string b = std::string(ARV_SOURCE_DIR) + "/configs/fullscale_mae.cfg";
  CHECK(run_cli({"cost-report", "--config", a, "--config", b, "--out", out.string()}) == 0);
  const std::string csv = slurp(out);
  CHECK(csv.find("enc_q,300,160") != std::string::npos);
  CHECK(csv.find("enc_kv,300,160") != std::string::npos);
  CHECK(csv.find("dec_q,1372,1568") != std::string::npos);
  CHECK(csv.find("dec_kv,300,1568") != std::string::npos);
}

TEST_CASE("layout-dump emits the golden desk masks") {
  const fs::path dir = tmp_dir("arv_cli_layout");
  const std::string cfg = std::string(ARV_SOURCE_DIR) + "/configs/desk.cfg";
  CHECK(run_cli({"layout-dump", "--config", cfg, "--out", dir.string(), "--format", "csv",
                 "--stats", "--seed", "0"}) == 0);
  const std::string enc = slurp(dir / "enc_mask.csv");
  const std::string cross = slurp(dir / "cross_mask.csv");
  CHECK(enc == slurp(fs::path(ARV_SOURCE_DIR) / "tests/golden/desk_enc_mask.csv"));
  CHECK(cross == slurp(fs::path(ARV_SOURCE_DIR) / "tests/golden/desk_cross_mask.csv"));
  // stats CSV has one row per cube plus header
  const std::string stats = slurp(dir / "cube_stats.csv");
  CHECK(std::count(stats.begin(), stats.end(), '\n') == 65);

  CHECK(run_cli({"layout-dump", "--config", cfg, "--out", dir.string(), "--format", "pgm",
                 "--seed", "0"}) == 0);
  const std::string pgm = slurp(dir / "enc_mask.pgm");
  CHECK(pgm.rfind("P5\n14 14\n255\n", 0) == 0);
}

TEST_CASE("pretrain runs are idempotent given identical inputs and seeds") {
  const fs::path dir = tmp_dir("arv_cli_pretrain");
  const fs::path cfg = write_tiny_config(dir, 3);
  const fs::path m1 = dir / "m1.csv", m2 = dir / "m2.csv";
  const fs::path c1 = dir / "c1.ckpt", c2 = dir / "c2.ckpt";
  CHECK(run_cli({"pretrain", "--config", cfg.string(), "--metrics", m1.string(), "--out",
                 c1.string()}) == 0);
  CHECK(run_cli({"pretrain", "--config", cfg.string(), "--metrics", m2.string(), "--out",
                 c2.string()}) == 0);
  CHECK(strip_seconds_column(slurp(m1)) == strip_seconds_column(slurp(m2)));
  CHECK(slurp(c1) == slurp(c2));
}

TEST_CASE("pretrain resume via the CLI reproduces the full run") {
  const fs::path dir = tmp_dir("arv_cli_resume");
  const fs::path cfg = write_tiny_config(dir, 6);
  const fs::path full = dir / "full.ckpt", half = dir / "half.ckpt", resumed = dir / "resumed.ckpt";
  CHECK(run_cli({"pretrain", "--config", cfg.string(), "--out", full.string()}) == 0);
  CHECK(run_cli({"pretrain", "--config", cfg.string(), "--out", half.string(), "--halt-step",
                 "3"}) == 0);
  CHECK(run_cli({"pretrain", "--config", cfg.string(), "--resume", half.string(), "--out",
                 resumed.string()}) == 0);
  CHECK(slurp(full) == slurp(resumed));
}

TEST_CASE("probe runs on a checkpoint and on a random init") {
  const fs::path dir = tmp_dir("arv_cli_probe");
  const fs::path cfg = write_tiny_config(dir, 2);
  const fs::path ckpt = dir / "p.ckpt";
  CHECK(run_cli({"pretrain", "--config", cfg.string(), "--out", ckpt.string()}) == 0);
  CHECK(run_cli({"probe", "--config", cfg.string(), "--checkpoint", ckpt.string(), "--mode",
                 "linear"}) == 0);
  CHECK(run_cli({"probe", "--config", cfg.string(), "--random-init"}) == 0);
  CHECK(run_cli({"probe", "--config", cfg.string()}) == 1);  // no checkpoint, no flag
}

TEST_CASE("rank-report writes one row per encoder layer") {
  const fs::path dir = tmp_dir("arv_cli_rank");
  const fs::path cfg = write_tiny_config(dir, 2);
  const fs::path ckpt = dir / "r.ckpt";
  const fs::path out = dir / "rank.csv";
  CHECK(run_cli({"pretrain", "--config", cfg.string(), "--out", ckpt.string()}) == 0);
  CHECK(run_cli({"rank-report", "--checkpoint", ckpt.string(), "--out", out.string(),
                 "--samples", "3"}) == 0);
  const std::string csv = slurp(out);
  CHECK(csv.find("layer,mean_rank,min,max") == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);  // header + 1 layer
}

TEST_CASE("gradcheck subcommand exits cleanly") {
  const fs::path dir = tmp_dir("arv_cli_gradcheck");
  const fs::path cfg = write_tiny_config(dir, 2);
  CHECK(run_cli({"gradcheck", "--config", cfg.string(), "--params", "6"}) == 0);
}

TEST_CASE("missing input files map to exit 2") {
  CHECK(run_cli({"pretrain", "--config", "/nonexistent/nope.cfg"}) == 2);
  CHECK(run_cli({"rank-report", "--checkpoint", "/nonexistent/x.ckpt", "--out", "/tmp/x.csv"}) ==
        2);
}
