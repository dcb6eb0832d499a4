#include "hstrack/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace hstrack {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

std::string join_int_list(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i)
    out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

}  // namespace

KeyValues KeyValues::parse_text(const std::string& text) {
  KeyValues out;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": expected key=value, got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
    out.kv_[key] = value;
  }
  return out;
}

KeyValues KeyValues::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

std::string KeyValues::get(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

double KeyValues::get(const std::string& key, double fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "inf" || v == "infinity") return std::numeric_limits<double>::infinity();
  return std::stod(it->second);
}

int KeyValues::get(const std::string& key, int fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : std::stoi(it->second);
}

uint64_t KeyValues::get(const std::string& key, uint64_t fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : static_cast<uint64_t>(std::stoull(it->second));
}

bool KeyValues::get(const std::string& key, bool fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw std::runtime_error("config: bad boolean for " + key + ": " + it->second);
}

namespace {

AmdVariant parse_amd(const std::string& s) {
  if (s == "adaptor_haar") return AmdVariant::kAdaptorHaar;
  if (s == "adaptor_split") return AmdVariant::kAdaptorSplit;
  if (s == "adaptor_fft") return AmdVariant::kAdaptorFft;
  if (s == "split_random") return AmdVariant::kSplitRandom;
  if (s == "haar_only") return AmdVariant::kHaarOnly;
  throw std::runtime_error("config: unknown amd variant '" + s + "'");
}

std::string amd_name(AmdVariant v) {
  switch (v) {
    case AmdVariant::kAdaptorHaar: return "adaptor_haar";
    case AmdVariant::kAdaptorSplit: return "adaptor_split";
    case AmdVariant::kAdaptorFft: return "adaptor_fft";
    case AmdVariant::kSplitRandom: return "split_random";
    case AmdVariant::kHaarOnly: return "haar_only";
  }
  return "adaptor_haar";
}

BranchOp parse_branch_op(const std::string& s) {
  if (s == "attn") return BranchOp::kCrossAttention;
  if (s == "conv") return BranchOp::kConv;
  throw std::runtime_error("config: unknown branch operator '" + s + "'");
}

FusionKind parse_fusion(const std::string& s) {
  if (s == "bottleneck") return FusionKind::kBottleneck;
  if (s == "add") return FusionKind::kAddition;
  if (s == "conv") return FusionKind::kConv;
  if (s == "attn") return FusionKind::kAttention;
  throw std::runtime_error("config: unknown fusion strategy '" + s + "'");
}

std::string fusion_name(FusionKind f) {
  switch (f) {
    case FusionKind::kBottleneck: return "bottleneck";
    case FusionKind::kAddition: return "add";
    case FusionKind::kConv: return "conv";
    case FusionKind::kAttention: return "attn";
  }
  return "bottleneck";
}

}  // namespace

TrainConfig train_config_from(const KeyValues& kv) {
  TrainConfig c;
  c.model.unmix.bands = kv.get("bands", 16);
  c.model.unmix.endmembers = kv.get("r", 6);
  c.model.unmix.encoder =
      kv.get("encoder", std::string("mlp")) == "conv" ? EncoderKind::kConv
                                                      : EncoderKind::kPixelMlp;
  c.model.prompts_enabled = kv.get("prompts", true);
  c.model.mrdm_enabled = kv.get("mrdm", true);
  c.model.material_input = kv.get("backbone_channels", 3) == 6;
  if (c.model.material_input) c.model.backbone.in_channels = 6;
  c.model.amd = parse_amd(kv.get("amd", std::string("adaptor_haar")));
  c.model.prompt.low_op = parse_branch_op(kv.get("low_op", std::string("attn")));
  c.model.prompt.high_op = parse_branch_op(kv.get("high_op", std::string("conv")));
  c.model.prompt.fusion = parse_fusion(kv.get("fusion", std::string("bottleneck")));
  if (kv.has("inject_layers"))
    c.model.inject_layers = parse_int_list(kv.get("inject_layers", std::string()));
  c.model.backbone.blocks = kv.get("blocks", c.model.backbone.blocks);
  c.model.rho = kv.get("rho", 0.25);

  c.epochs = kv.get("epochs", 3);
  c.pairs_per_epoch = kv.get("pairs_per_epoch", 288);
  c.batch_size = kv.get("batch_size", 16);
  c.max_steps = kv.get("max_steps", 0);
  c.lr = kv.get("lr", 4e-5);
  c.weight_decay = kv.get("weight_decay", 1e-4);
  c.lr_drop_frac = kv.get("lr_drop_frac", 0.94);
  std::string mode = kv.get("mode", std::string("joint"));
  if (mode != "joint" && mode != "frozen")
    throw std::runtime_error("config: mode must be joint or frozen, got " + mode);
  c.frozen_backbone = mode == "frozen";
  c.weights.lambda_u = kv.get("lambda_u", 0.5);
  c.weights.lambda_ce = kv.get("lambda_ce", 0.2);
  c.warmup_steps = kv.get("warmup_steps", 100);
  c.seed = kv.get("seed", static_cast<uint64_t>(0));

  if (c.weights.lambda_u < 0.0 || c.weights.lambda_u > 1.0)
    throw std::runtime_error("config: lambda_u must be in [0,1]");
  if (c.weights.lambda_ce <= 0.0 || c.weights.lambda_ce >= 1.0)
    throw std::runtime_error("config: lambda_ce must be in (0,1)");
  if (c.model.unmix.endmembers < 2)
    throw std::runtime_error("config: r must be >= 2");
  if (c.batch_size < 1) throw std::runtime_error("config: batch_size must be >= 1");
  return c;
}

TrainConfig parse_train_config(const std::string& path) {
  return train_config_from(KeyValues::parse_file(path));
}

std::string serialize_train_config(const TrainConfig& c) {
  std::ostringstream os;
  os << "bands=" << c.model.unmix.bands << "\n";
  os << "r=" << c.model.unmix.endmembers << "\n";
  os << "encoder=" << (c.model.unmix.encoder == EncoderKind::kConv ? "conv" : "mlp") << "\n";
  os << "prompts=" << (c.model.prompts_enabled ? "on" : "off") << "\n";
  os << "mrdm=" << (c.model.mrdm_enabled ? "on" : "off") << "\n";
  os << "backbone_channels=" << (c.model.material_input ? 6 : 3) << "\n";
  os << "amd=" << amd_name(c.model.amd) << "\n";
  os << "low_op=" << (c.model.prompt.low_op == BranchOp::kCrossAttention ? "attn" : "conv") << "\n";
  os << "high_op=" << (c.model.prompt.high_op == BranchOp::kCrossAttention ? "attn" : "conv") << "\n";
  os << "fusion=" << fusion_name(c.model.prompt.fusion) << "\n";
  os << "inject_layers=" << join_int_list(c.model.inject_layers) << "\n";
  os << "blocks=" << c.model.backbone.blocks << "\n";
  os << "rho=" << c.model.rho << "\n";
  os << "epochs=" << c.epochs << "\n";
  os << "pairs_per_epoch=" << c.pairs_per_epoch << "\n";
  os << "batch_size=" << c.batch_size << "\n";
  os << "max_steps=" << c.max_steps << "\n";
  os << "lr=" << c.lr << "\n";
  os << "weight_decay=" << c.weight_decay << "\n";
  os << "lr_drop_frac=" << c.lr_drop_frac << "\n";
  os << "mode=" << (c.frozen_backbone ? "frozen" : "joint") << "\n";
  os << "lambda_u=" << c.weights.lambda_u << "\n";
  os << "lambda_ce=" << c.weights.lambda_ce << "\n";
  os << "warmup_steps=" << c.warmup_steps << "\n";
  os << "seed=" << c.seed << "\n";
  return os.str();
}

SceneSpec scene_spec_from(const KeyValues& kv) {
  SceneSpec s;
  s.bands = kv.get("bands", s.bands);
  s.height = kv.get("height", s.height);
  s.width = kv.get("width", s.width);
  s.frames = kv.get("frames", s.frames);
  s.r_true = kv.get("r_true", s.r_true);
  s.target_min = kv.get("target_min", s.target_min);
  s.target_max = kv.get("target_max", s.target_max);
  s.vel_max = kv.get("vel_max", s.vel_max);
  s.jitter_sigma = kv.get("jitter", s.jitter_sigma);
  s.snr_db = kv.get("snr_db", s.snr_db);
  s.camouflage = kv.get("camouflage", s.camouflage);
  s.with_target = kv.get("with_target", s.with_target);
  s.softmax_temp = kv.get("softmax_temp", s.softmax_temp);
  s.min_endmember_sad = kv.get("min_sad", s.min_endmember_sad);
  s.reflectance_floor = kv.get("floor", s.reflectance_floor);
  s.seed = kv.get("seed", s.seed);
  return s;
}

SceneSpec parse_scene_spec(const std::string& path) {
  return scene_spec_from(KeyValues::parse_file(path));
}

}  // namespace hstrack
