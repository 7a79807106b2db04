#include "arv/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace arv {

MotionTaskSpec TrainConfig::motion_spec() const {
  MotionTaskSpec s;
  s.t_frames = frames;
  s.height = height;
  s.width = width;
  s.channels = channels;
  s.num_directions = num_directions;
  s.shape_size = shape_size;
  s.speed = speed;
  s.noise = noise;
  s.seed = data_seed;
  return s;
}

TokenGridDims TrainConfig::token_grid_dims() const {
  if (cube_t < 1 || cube_h < 1 || cube_w < 1)
    throw config_error("cube extents must be >= 1");
  if (frames % cube_t != 0) throw config_error("frames not divisible by cube_t");
  if (height % cube_h != 0) throw config_error("height not divisible by cube_h");
  if (width % cube_w != 0) throw config_error("width not divisible by cube_w");
  return {frames / cube_t, height / cube_h, width / cube_w};
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.embed_dim = embed_dim;
  m.num_heads = num_heads;
  m.enc_depth = enc_depth;
  m.dec_width = dec_width;
  m.dec_depth = dec_depth;
  m.mlp_ratio = mlp_ratio;
  m.cube_dim = cube_dim();
  m.decoder_self_attention = decoder_self_attention;
  m.positional_embedding = positional_embedding;
  m.num_classes = num_directions;
  return m;
}

CostConfig TrainConfig::cost_config(const std::string& name) const {
  CostConfig c;
  c.name = name;
  c.t_frames = frames;
  c.height = height;
  c.width = width;
  c.channels = channels;
  c.cube = cube_spec();
  c.cluster = cluster_scheme();
  c.mask_ratio = mask_ratio;
  c.mae_style = mae_style;
  c.embed_dim = embed_dim;
  c.num_heads = num_heads;
  c.enc_depth = enc_depth;
  c.dec_width = dec_width;
  c.dec_depth = dec_depth;
  c.mlp_ratio = mlp_ratio;
  return c;
}

void TrainConfig::validate_all() const {
  validate(motion_spec());
  (void)token_grid_dims();
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0))
    throw config_error("mask_ratio must be in [0, 1)");
  if (!(lr > 0.0)) throw config_error("lr must be > 0");
  if (batch_size < 1) throw config_error("batch_size must be >= 1");
  if (steps < 1) throw config_error("steps must be >= 1");
  if (warmup_steps < 0) throw config_error("warmup_steps must be >= 0");
  if (!(target_eps > 0.0)) throw config_error("target_eps must be > 0");
  validate(model_config());
}

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw config_error(cat("config key '", key, "': expected integer, got '", v, "'"));
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    uint64_t x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw config_error(cat("config key '", key, "': expected unsigned integer, got '", v, "'"));
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw config_error(cat("config key '", key, "': expected number, got '", v, "'"));
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw config_error(cat("config key '", key, "': expected on/off, got '", v, "'"));
}

std::string format_double(double x) {
  char buf[64];
  // Shortest text that round-trips a double.
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  double back;
  for (int prec = 1; prec <= 16; ++prec) {
    char probe[64];
    std::snprintf(probe, sizeof(probe), "%.*g", prec, x);
    std::sscanf(probe, "%lf", &back);
    if (back == x) return probe;
  }
  return buf;
}

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& key_table() {
  static const std::map<std::string, Setter> table = {
      {"frames", [](TrainConfig& c, const std::string& k, const std::string& v) { c.frames = static_cast<int32_t>(parse_int(k, v)); }},
      {"height", [](TrainConfig& c, const std::string& k, const std::string& v) { c.height = static_cast<int32_t>(parse_int(k, v)); }},
      {"width", [](TrainConfig& c, const std::string& k, const std::string& v) { c.width = static_cast<int32_t>(parse_int(k, v)); }},
      {"channels", [](TrainConfig& c, const std::string& k, const std::string& v) { c.channels = static_cast<int32_t>(parse_int(k, v)); }},
      {"num_directions", [](TrainConfig& c, const std::string& k, const std::string& v) { c.num_directions = static_cast<int32_t>(parse_int(k, v)); }},
      {"shape_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.shape_size = static_cast<int32_t>(parse_int(k, v)); }},
      {"speed", [](TrainConfig& c, const std::string& k, const std::string& v) { c.speed = parse_double(k, v); }},
      {"noise", [](TrainConfig& c, const std::string& k, const std::string& v) { c.noise = parse_double(k, v); }},
      {"data_seed", [](TrainConfig& c, const std::string& k, const std::string& v) { c.data_seed = parse_u64(k, v); }},
      {"data_count", [](TrainConfig& c, const std::string& k, const std::string& v) { c.data_count = parse_int(k, v); }},
      {"data_dir", [](TrainConfig& c, const std::string&, const std::string& v) { c.data_dir = v; }},
      {"cube_t", [](TrainConfig& c, const std::string& k, const std::string& v) { c.cube_t = static_cast<int32_t>(parse_int(k, v)); }},
      {"cube_h", [](TrainConfig& c, const std::string& k, const std::string& v) { c.cube_h = static_cast<int32_t>(parse_int(k, v)); }},
      {"cube_w", [](TrainConfig& c, const std::string& k, const std::string& v) { c.cube_w = static_cast<int32_t>(parse_int(k, v)); }},
      {"normalize_targets", [](TrainConfig& c, const std::string& k, const std::string& v) { c.normalize_targets = parse_bool(k, v); }},
      {"target_eps", [](TrainConfig& c, const std::string& k, const std::string& v) { c.target_eps = parse_double(k, v); }},
      {"target_scope", [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v == "full") c.target_scope = TargetScope::Full;
         else if (v == "visible_only") c.target_scope = TargetScope::VisibleOnly;
         else throw config_error(cat("config key '", k, "': expected full|visible_only"));
       }},
      {"cluster_t", [](TrainConfig& c, const std::string& k, const std::string& v) { c.cluster_t = static_cast<int32_t>(parse_int(k, v)); }},
      {"cluster_h", [](TrainConfig& c, const std::string& k, const std::string& v) { c.cluster_h = static_cast<int32_t>(parse_int(k, v)); }},
      {"cluster_w", [](TrainConfig& c, const std::string& k, const std::string& v) { c.cluster_w = static_cast<int32_t>(parse_int(k, v)); }},
      {"order_policy", [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v == "spatial_first") c.order_policy = OrderKind::SpatialFirst;
         else if (v == "temporal_first") c.order_policy = OrderKind::TemporalFirst;
         else if (v == "random_raster") c.order_policy = OrderKind::RandomRaster;
         else throw config_error(cat("config key '", k, "': expected spatial_first|temporal_first|random_raster"));
       }},
      {"mask_ratio", [](TrainConfig& c, const std::string& k, const std::string& v) { c.mask_ratio = parse_double(k, v); }},
      {"mae_style", [](TrainConfig& c, const std::string& k, const std::string& v) { c.mae_style = parse_bool(k, v); }},
      {"embed_dim", [](TrainConfig& c, const std::string& k, const std::string& v) { c.embed_dim = static_cast<int32_t>(parse_int(k, v)); }},
      {"num_heads", [](TrainConfig& c, const std::string& k, const std::string& v) { c.num_heads = static_cast<int32_t>(parse_int(k, v)); }},
      {"enc_depth", [](TrainConfig& c, const std::string& k, const std::string& v) { c.enc_depth = static_cast<int32_t>(parse_int(k, v)); }},
      {"dec_width", [](TrainConfig& c, const std::string& k, const std::string& v) { c.dec_width = static_cast<int32_t>(parse_int(k, v)); }},
      {"dec_depth", [](TrainConfig& c, const std::string& k, const std::string& v) { c.dec_depth = static_cast<int32_t>(parse_int(k, v)); }},
      {"mlp_ratio", [](TrainConfig& c, const std::string& k, const std::string& v) { c.mlp_ratio = parse_double(k, v); }},
      {"decoder_self_attention", [](TrainConfig& c, const std::string& k, const std::string& v) { c.decoder_self_attention = parse_bool(k, v); }},
      {"positional_embedding", [](TrainConfig& c, const std::string& k, const std::string& v) { c.positional_embedding = parse_bool(k, v); }},
      {"steps", [](TrainConfig& c, const std::string& k, const std::string& v) { c.steps = parse_int(k, v); }},
      {"batch_size", [](TrainConfig& c, const std::string& k, const std::string& v) { c.batch_size = static_cast<int32_t>(parse_int(k, v)); }},
      {"lr", [](TrainConfig& c, const std::string& k, const std::string& v) { c.lr = parse_double(k, v); }},
      {"beta1", [](TrainConfig& c, const std::string& k, const std::string& v) { c.beta1 = parse_double(k, v); }},
      {"beta2", [](TrainConfig& c, const std::string& k, const std::string& v) { c.beta2 = parse_double(k, v); }},
      {"adam_eps", [](TrainConfig& c, const std::string& k, const std::string& v) { c.adam_eps = parse_double(k, v); }},
      {"weight_decay", [](TrainConfig& c, const std::string& k, const std::string& v) { c.weight_decay = parse_double(k, v); }},
      {"warmup_steps", [](TrainConfig& c, const std::string& k, const std::string& v) { c.warmup_steps = parse_int(k, v); }},
      {"cosine_decay", [](TrainConfig& c, const std::string& k, const std::string& v) { c.cosine_decay = parse_bool(k, v); }},
      {"seed", [](TrainConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); }},
      {"precision", [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v == "f32") c.precision = Precision::F32;
         else if (v == "f64") c.precision = Precision::F64;
         else throw config_error(cat("config key '", k, "': expected f32|f64"));
       }},
      {"probe_count", [](TrainConfig& c, const std::string& k, const std::string& v) { c.probe_count = parse_int(k, v); }},
      {"probe_seed", [](TrainConfig& c, const std::string& k, const std::string& v) { c.probe_seed = parse_u64(k, v); }},
      {"probe_steps", [](TrainConfig& c, const std::string& k, const std::string& v) { c.probe_steps = parse_int(k, v); }},
      {"probe_lr", [](TrainConfig& c, const std::string& k, const std::string& v) { c.probe_lr = parse_double(k, v); }},
      {"finetune_steps", [](TrainConfig& c, const std::string& k, const std::string& v) { c.finetune_steps = parse_int(k, v); }},
      {"finetune_lr", [](TrainConfig& c, const std::string& k, const std::string& v) { c.finetune_lr = parse_double(k, v); }},
  };
  return table;
}

}  // namespace

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw config_error(cat("config line ", lineno, ": expected 'key = value'"));
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    auto it = key_table().find(key);
    if (it == key_table().end())
      throw config_error(cat("unknown config key '", key, "' (line ", lineno, ")"));
    it->second(cfg, key, value);
  }
  return cfg;
}

TrainConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error(cat("cannot open config file: ", path));
  std::ostringstream os;
  os << f.rdbuf();
  return parse_config_text(os.str());
}

std::string precision_name(Precision p) { return p == Precision::F32 ? "f32" : "f64"; }

std::string order_kind_name(OrderKind k) {
  switch (k) {
    case OrderKind::SpatialFirst: return "spatial_first";
    case OrderKind::TemporalFirst: return "temporal_first";
    case OrderKind::RandomRaster: return "random_raster";
  }
  return "random_raster";
}

std::string serialize_config(const TrainConfig& c) {
  std::ostringstream os;
  auto kv = [&](const char* k, const std::string& v) { os << k << " = " << v << "\n"; };
  auto kvi = [&](const char* k, int64_t v) { kv(k, std::to_string(v)); };
  auto kvu = [&](const char* k, uint64_t v) { kv(k, std::to_string(v)); };
  auto kvd = [&](const char* k, double v) { kv(k, format_double(v)); };
  auto kvb = [&](const char* k, bool v) { kv(k, v ? "on" : "off"); };

  kvi("frames", c.frames);
  kvi("height", c.height);
  kvi("width", c.width);
  kvi("channels", c.channels);
  kvi("num_directions", c.num_directions);
  kvi("shape_size", c.shape_size);
  kvd("speed", c.speed);
  kvd("noise", c.noise);
  kvu("data_seed", c.data_seed);
  kvi("data_count", c.data_count);
  if (!c.data_dir.empty()) kv("data_dir", c.data_dir);
  kvi("cube_t", c.cube_t);
  kvi("cube_h", c.cube_h);
  kvi("cube_w", c.cube_w);
  kvb("normalize_targets", c.normalize_targets);
  kvd("target_eps", c.target_eps);
  kv("target_scope", c.target_scope == TargetScope::Full ? "full" : "visible_only");
  kvi("cluster_t", c.cluster_t);
  kvi("cluster_h", c.cluster_h);
  kvi("cluster_w", c.cluster_w);
  kv("order_policy", order_kind_name(c.order_policy));
  kvd("mask_ratio", c.mask_ratio);
  kvb("mae_style", c.mae_style);
  kvi("embed_dim", c.embed_dim);
  kvi("num_heads", c.num_heads);
  kvi("enc_depth", c.enc_depth);
  kvi("dec_width", c.dec_width);
  kvi("dec_depth", c.dec_depth);
  kvd("mlp_ratio", c.mlp_ratio);
  kvb("decoder_self_attention", c.decoder_self_attention);
  kvb("positional_embedding", c.positional_embedding);
  kvi("steps", c.steps);
  kvi("batch_size", c.batch_size);
  kvd("lr", c.lr);
  kvd("beta1", c.beta1);
  kvd("beta2", c.beta2);
  kvd("adam_eps", c.adam_eps);
  kvd("weight_decay", c.weight_decay);
  kvi("warmup_steps", c.warmup_steps);
  kvb("cosine_decay", c.cosine_decay);
  kvu("seed", c.seed);
  kv("precision", precision_name(c.precision));
  kvi("probe_count", c.probe_count);
  kvu("probe_seed", c.probe_seed);
  kvi("probe_steps", c.probe_steps);
  kvd("probe_lr", c.probe_lr);
  kvi("finetune_steps", c.finetune_steps);
  kvd("finetune_lr", c.finetune_lr);
  return os.str();
}

}  // namespace arv
