#include "ght/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

namespace ght {
namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(strprintf("config: %s expects a boolean, got '%s'", key.c_str(), v.c_str()));
}

double parse_real(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(strprintf("config: %s expects a number, got '%s'", key.c_str(), v.c_str()));
  }
}

int64_t parse_int(const std::string& v, const std::string& key) {
  try {
    size_t pos = 0;
    long long i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return i;
  } catch (const std::exception&) {
    throw ConfigError(strprintf("config: %s expects an integer, got '%s'", key.c_str(), v.c_str()));
  }
}

}  // namespace

RunConfig preset_config(const std::string& name) {
  RunConfig cfg;
  cfg.preset = name;
  if (name.empty() || name == "tiny") {
    cfg.model.arch = Arch::EncoderDecoder;
    cfg.model.layers = 2;
    cfg.model.heads = 4;
    cfg.model.d_model = 64;
    cfg.model.d_ff = 256;
  } else if (name == "small") {
    cfg.model.arch = Arch::EncoderDecoder;
    cfg.model.layers = 4;
    cfg.model.heads = 8;
    cfg.model.d_model = 128;
    cfg.model.d_ff = 512;
  } else if (name == "paper-base") {
    // Accounting-only architecture; never trained at desk scale.
    cfg.model.arch = Arch::EncoderDecoder;
    cfg.model.layers = 6;
    cfg.model.heads = 8;
    cfg.model.d_model = 512;
    cfg.model.d_ff = 2048;
    cfg.model.vocab_size = 40000;
    cfg.model.dropout = 0.3;
  } else {
    throw ConfigError(strprintf("config: unknown preset '%s'", name.c_str()));
  }
  return cfg;
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  auto is = [&](const char* k) { return key == k; };

  if (is("model.preset")) {
    std::string out_dir = cfg.train.output_dir;
    cfg = preset_config(v);
    cfg.train.output_dir = out_dir;
    return;
  }
  if (is("model.arch")) {
    if (v == "encoder_decoder")
      cfg.model.arch = Arch::EncoderDecoder;
    else if (v == "decoder_only")
      cfg.model.arch = Arch::DecoderOnly;
    else
      throw ConfigError(strprintf("config: model.arch must be encoder_decoder or decoder_only, got '%s'", v.c_str()));
    return;
  }
  if (is("model.layers")) { cfg.model.layers = static_cast<int>(parse_int(v, key)); return; }
  if (is("model.heads")) { cfg.model.heads = static_cast<int>(parse_int(v, key)); return; }
  if (is("model.d_model")) { cfg.model.d_model = static_cast<int>(parse_int(v, key)); return; }
  if (is("model.d_ff")) { cfg.model.d_ff = static_cast<int>(parse_int(v, key)); return; }
  if (is("model.vocab_size")) { cfg.model.vocab_size = parse_int(v, key); return; }
  if (is("model.tie_embeddings")) { cfg.model.tie_embeddings = parse_bool(v, key); return; }
  if (is("model.dropout")) { cfg.model.dropout = parse_real(v, key); return; }

  if (is("group.c")) { cfg.group.c = static_cast<int>(parse_int(v, key)); return; }
  if (is("group.alpha")) { cfg.group.alpha = parse_real(v, key); return; }
  if (is("group.beta")) { cfg.group.beta = parse_real(v, key); return; }
  if (is("group.fm")) {
    cfg.group.tau_v = cfg.group.tau_a = cfg.group.tau_o = 0.0;
    if (v == "v")
      cfg.group.tau_v = 1.0;
    else if (v == "a")
      cfg.group.tau_a = 1.0;
    else if (v == "o")
      cfg.group.tau_o = 1.0;
    else
      throw ConfigError(strprintf("config: group.fm must be one of v|a|o, got '%s'", v.c_str()));
    return;
  }
  if (is("group.tau_v")) { cfg.group.tau_v = parse_real(v, key); return; }
  if (is("group.tau_a")) { cfg.group.tau_a = parse_real(v, key); return; }
  if (is("group.tau_o")) { cfg.group.tau_o = parse_real(v, key); return; }
  if (is("group.variant")) {
    if (v == "continuous")
      cfg.group.variant = group::LossVariant::Continuous;
    else if (v == "categorical")
      cfg.group.variant = group::LossVariant::Categorical;
    else
      throw ConfigError(strprintf("config: group.variant must be continuous or categorical, got '%s'", v.c_str()));
    return;
  }
  if (is("group.rho_epsilon")) { cfg.group.rho_epsilon = parse_real(v, key); return; }
  if (is("group.ema_decay")) { cfg.group.ema_decay = parse_real(v, key); return; }
  if (is("group.refresh_every")) { cfg.group.refresh_every = static_cast<int>(parse_int(v, key)); return; }
  if (is("group.kmeans_restarts")) { cfg.group.kmeans_restarts = static_cast<int>(parse_int(v, key)); return; }
  if (is("group.attn_pool_dim")) { cfg.group.attn_pool_dim = static_cast<int>(parse_int(v, key)); return; }
  if (is("group.apply_enc_self")) { cfg.group.apply_enc_self = parse_bool(v, key); return; }
  if (is("group.apply_dec_self")) { cfg.group.apply_dec_self = parse_bool(v, key); return; }
  if (is("group.apply_cross")) { cfg.group.apply_cross = parse_bool(v, key); return; }

  if (is("train.seed")) { cfg.train.seed = static_cast<uint64_t>(parse_int(v, key)); return; }
  if (is("train.batch_size")) { cfg.train.batch_size = static_cast<int>(parse_int(v, key)); return; }
  if (is("train.max_epochs")) { cfg.train.max_epochs = static_cast<int>(parse_int(v, key)); return; }
  if (is("train.patience")) { cfg.train.patience = static_cast<int>(parse_int(v, key)); return; }
  if (is("train.lr_peak")) { cfg.train.lr_peak = parse_real(v, key); return; }
  if (is("train.warmup_steps")) { cfg.train.warmup_steps = parse_int(v, key); return; }
  if (is("train.weight_decay")) { cfg.train.weight_decay = parse_real(v, key); return; }
  if (is("train.adam_beta1")) { cfg.train.adam_beta1 = parse_real(v, key); return; }
  if (is("train.adam_beta2")) { cfg.train.adam_beta2 = parse_real(v, key); return; }
  if (is("train.adam_eps")) { cfg.train.adam_eps = parse_real(v, key); return; }
  if (is("train.clip_norm")) { cfg.train.clip_norm = parse_real(v, key); return; }
  if (is("train.label_smoothing")) { cfg.train.label_smoothing = parse_real(v, key); return; }
  if (is("train.log_every")) { cfg.train.log_every = static_cast<int>(parse_int(v, key)); return; }
  if (is("train.v2s")) { cfg.train.v2s = parse_bool(v, key); return; }
  if (is("train.vote_mode")) {
    if (v == "zero_one")
      cfg.train.vote_mode = v2s::VoteMode::ZeroOne;
    else if (v == "score_sum")
      cfg.train.vote_mode = v2s::VoteMode::ScoreSum;
    else
      throw ConfigError(strprintf("config: train.vote_mode must be zero_one or score_sum, got '%s'", v.c_str()));
    return;
  }
  if (is("train.finetune_warmup")) { cfg.train.finetune_warmup = parse_int(v, key); return; }
  if (is("train.finetune_max_epochs")) { cfg.train.finetune_max_epochs = static_cast<int>(parse_int(v, key)); return; }
  if (is("train.output_dir")) { cfg.train.output_dir = v; return; }

  if (is("task.kind")) {
    if (v == "copy")
      cfg.task.kind = TaskKind::Copy;
    else if (v == "reverse")
      cfg.task.kind = TaskKind::Reverse;
    else if (v == "char_lm")
      cfg.task.kind = TaskKind::CharLm;
    else
      throw ConfigError(strprintf("config: task.kind must be copy|reverse|char_lm, got '%s'", v.c_str()));
    return;
  }
  if (is("task.vocab")) { cfg.task.vocab = parse_int(v, key); return; }
  if (is("task.min_len")) { cfg.task.min_len = static_cast<int>(parse_int(v, key)); return; }
  if (is("task.max_len")) { cfg.task.max_len = static_cast<int>(parse_int(v, key)); return; }
  if (is("task.samples")) { cfg.task.samples = parse_int(v, key); return; }
  if (is("task.corpus")) { cfg.task.corpus = v; return; }

  throw UnknownKeyError(strprintf("config: unknown key '%s'", key.c_str()));
}

RunConfig parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError(strprintf("config: line %d is not key = value: '%s'", lineno, s.c_str()));
    std::string key = trim(s.substr(0, eq));
    std::string val = trim(s.substr(eq + 1));
    // strip a trailing comment
    size_t hash = val.find(" #");
    if (hash != std::string::npos) val = trim(val.substr(0, hash));
    pairs.emplace_back(key, val);
  }
  RunConfig cfg;
  // the preset seeds the defaults; every other key then overrides it
  for (const auto& [k, v] : pairs)
    if (k == "model.preset") cfg = preset_config(trim(v));
  for (const auto& [k, v] : pairs) {
    if (k == "model.preset") continue;
    apply_override(cfg, k, v);
  }
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError(strprintf("config: cannot open '%s'", path.c_str()));
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_to_text(const RunConfig& cfg, bool include_output_dir) {
  std::ostringstream os;
  os.precision(17);
  if (!cfg.preset.empty()) os << "model.preset = " << cfg.preset << "\n";
  os << "model.arch = "
     << (cfg.model.arch == Arch::EncoderDecoder ? "encoder_decoder" : "decoder_only") << "\n";
  os << "model.layers = " << cfg.model.layers << "\n";
  os << "model.heads = " << cfg.model.heads << "\n";
  os << "model.d_model = " << cfg.model.d_model << "\n";
  os << "model.d_ff = " << cfg.model.d_ff << "\n";
  os << "model.vocab_size = " << cfg.model.vocab_size << "\n";
  os << "model.tie_embeddings = " << (cfg.model.tie_embeddings ? "true" : "false") << "\n";
  os << "model.dropout = " << cfg.model.dropout << "\n";

  os << "group.c = " << cfg.group.c << "\n";
  os << "group.alpha = " << cfg.group.alpha << "\n";
  os << "group.beta = " << cfg.group.beta << "\n";
  os << "group.tau_v = " << cfg.group.tau_v << "\n";
  os << "group.tau_a = " << cfg.group.tau_a << "\n";
  os << "group.tau_o = " << cfg.group.tau_o << "\n";
  os << "group.variant = "
     << (cfg.group.variant == group::LossVariant::Continuous ? "continuous" : "categorical")
     << "\n";
  os << "group.rho_epsilon = " << cfg.group.rho_epsilon << "\n";
  os << "group.ema_decay = " << cfg.group.ema_decay << "\n";
  os << "group.refresh_every = " << cfg.group.refresh_every << "\n";
  os << "group.kmeans_restarts = " << cfg.group.kmeans_restarts << "\n";
  os << "group.attn_pool_dim = " << cfg.group.attn_pool_dim << "\n";
  os << "group.apply_enc_self = " << (cfg.group.apply_enc_self ? "true" : "false") << "\n";
  os << "group.apply_dec_self = " << (cfg.group.apply_dec_self ? "true" : "false") << "\n";
  os << "group.apply_cross = " << (cfg.group.apply_cross ? "true" : "false") << "\n";

  os << "train.seed = " << cfg.train.seed << "\n";
  os << "train.batch_size = " << cfg.train.batch_size << "\n";
  os << "train.max_epochs = " << cfg.train.max_epochs << "\n";
  os << "train.patience = " << cfg.train.patience << "\n";
  os << "train.lr_peak = " << cfg.train.lr_peak << "\n";
  os << "train.warmup_steps = " << cfg.train.warmup_steps << "\n";
  os << "train.weight_decay = " << cfg.train.weight_decay << "\n";
  os << "train.adam_beta1 = " << cfg.train.adam_beta1 << "\n";
  os << "train.adam_beta2 = " << cfg.train.adam_beta2 << "\n";
  os << "train.adam_eps = " << cfg.train.adam_eps << "\n";
  os << "train.clip_norm = " << cfg.train.clip_norm << "\n";
  os << "train.label_smoothing = " << cfg.train.label_smoothing << "\n";
  os << "train.log_every = " << cfg.train.log_every << "\n";
  os << "train.v2s = " << (cfg.train.v2s ? "true" : "false") << "\n";
  os << "train.vote_mode = " << v2s::vote_mode_name(cfg.train.vote_mode) << "\n";
  os << "train.finetune_warmup = " << cfg.train.finetune_warmup << "\n";
  os << "train.finetune_max_epochs = " << cfg.train.finetune_max_epochs << "\n";
  if (include_output_dir) os << "train.output_dir = " << cfg.train.output_dir << "\n";

  os << "task.kind = "
     << (cfg.task.kind == TaskKind::Copy ? "copy"
                                         : cfg.task.kind == TaskKind::Reverse ? "reverse" : "char_lm")
     << "\n";
  os << "task.vocab = " << cfg.task.vocab << "\n";
  os << "task.min_len = " << cfg.task.min_len << "\n";
  os << "task.max_len = " << cfg.task.max_len << "\n";
  os << "task.samples = " << cfg.task.samples << "\n";
  if (!cfg.task.corpus.empty()) os << "task.corpus = " << cfg.task.corpus << "\n";
  return os.str();
}

}  // namespace ght
