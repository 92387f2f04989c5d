#include "olab/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "olab/errors.hpp"

namespace olab::config {

namespace {

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for " + key + ": " + v);
  }
}

uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const uint64_t out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: bad unsigned integer for " + key + ": " + v);
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for " + key + ": " + v);
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: bad boolean for " + key + ": " + v);
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;
  // section -> key -> setter
  const std::map<std::string, std::map<std::string, Setter>> schema = {
      {"global",
       {{"seed", [](auto& c, auto& k, auto& v) { c.seed = to_u64(k, v); }},
        {"output_dir", [](auto& c, auto&, auto& v) { c.output_dir = v; }}}},
      {"corpus",
       {{"source", [](auto& c, auto&, auto& v) { c.corpus_source = v; }},
        {"seed", [](auto& c, auto& k, auto& v) { c.corpus_seed = to_u64(k, v); }},
        {"games", [](auto& c, auto& k, auto& v) { c.corpus_games = to_int(k, v); }},
        {"scale", [](auto& c, auto& k, auto& v) { c.scale = to_int(k, v); }}}},
      {"model",
       {{"kind", [](auto& c, auto&, auto& v) { c.model_kind = v; }},
        {"d_model", [](auto& c, auto& k, auto& v) { c.model.d_model = to_int(k, v); }},
        {"n_layers", [](auto& c, auto& k, auto& v) { c.model.n_layers = to_int(k, v); }},
        {"n_heads", [](auto& c, auto& k, auto& v) { c.model.n_heads = to_int(k, v); }},
        {"d_ff", [](auto& c, auto& k, auto& v) { c.model.d_ff = to_int(k, v); }},
        {"max_seq_len", [](auto& c, auto& k, auto& v) { c.model.max_seq_len = to_int(k, v); }},
        {"d_v", [](auto& c, auto& k, auto& v) { c.model.d_v = to_int(k, v); }},
        {"d_visual_in", [](auto& c, auto& k, auto& v) { c.model.d_visual_in = to_int(k, v); }},
        {"conv_channels", [](auto& c, auto& k, auto& v) { c.model.conv_channels = to_int(k, v); }},
        {"conv_stages", [](auto& c, auto& k, auto& v) { c.model.conv_stages = to_int(k, v); }},
        {"image_side", [](auto& c, auto& k, auto& v) { c.model.image_side = to_int(k, v); }},
        {"dropout", [](auto& c, auto& k, auto& v) { c.model.dropout = to_double(k, v); }},
        {"seed", [](auto& c, auto& k, auto& v) { c.model.seed = to_u64(k, v); }}}},
      {"schedule",
       {{"max_epochs", [](auto& c, auto& k, auto& v) { c.schedule.max_epochs = to_int(k, v); }},
        {"validate_every",
         [](auto& c, auto& k, auto& v) { c.schedule.validate_every = to_int(k, v); }},
        {"patience", [](auto& c, auto& k, auto& v) { c.schedule.patience = to_int(k, v); }},
        {"batch_size", [](auto& c, auto& k, auto& v) { c.schedule.batch_size = to_int(k, v); }},
        {"conv_batch_size",
         [](auto& c, auto& k, auto& v) { c.schedule.conv_batch_size = to_int(k, v); }},
        {"learning_rate",
         [](auto& c, auto& k, auto& v) { c.schedule.learning_rate = to_double(k, v); }},
        {"scale_cap", [](auto& c, auto& k, auto& v) { c.schedule.scale_cap = to_int(k, v); }},
        {"p_future_mask",
         [](auto& c, auto& k, auto& v) { c.schedule.p_future_mask = to_double(k, v); }},
        {"p_replace", [](auto& c, auto& k, auto& v) { c.schedule.p_replace = to_double(k, v); }},
        {"future_loss_all_masked",
         [](auto& c, auto& k, auto& v) { c.schedule.future_loss_all_masked = to_bool(k, v); }},
        {"max_steps_per_epoch",
         [](auto& c, auto& k, auto& v) { c.schedule.max_steps_per_epoch = to_int(k, v); }}}},
      {"features",
       {{"featurizer", [](auto& c, auto&, auto& v) { c.featurizer = v; }},
        {"encoder_checkpoint", [](auto& c, auto&, auto& v) { c.encoder_checkpoint = v; }}}},
      {"evaluation",
       {{"split", [](auto& c, auto&, auto& v) { c.eval_split = v; }},
        {"rotate", [](auto& c, auto& k, auto& v) { c.rotate = to_bool(k, v); }}}},
      {"probing",
       {{"samples_per_game",
         [](auto& c, auto& k, auto& v) { c.probe_samples_per_game = to_int(k, v); }},
        {"epochs", [](auto& c, auto& k, auto& v) { c.probe_epochs = to_int(k, v); }}}},
      {"alignment",
       {{"source", [](auto& c, auto&, auto& v) { c.align_source = v; }},
        {"target", [](auto& c, auto&, auto& v) { c.align_target = v; }},
        {"mode", [](auto& c, auto&, auto& v) { c.align_mode = v; }},
        {"features", [](auto& c, auto& k, auto& v) { c.align_features = to_int(k, v); }}}},
  };

  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config: malformed section header at line " + std::to_string(line_no));
      section = trim(line.substr(1, line.size() - 2));
      if (!schema.count(section))
        throw ConfigError("config: unknown section [" + section + "]");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected key = value at line " + std::to_string(line_no));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError("config: key outside any section: " + key);
    const auto& keys = schema.at(section);
    auto it = keys.find(key);
    if (it == keys.end())
      throw ConfigError("config: unknown key " + key + " in section [" + section + "]");
    it->second(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

void ExperimentConfig::validate() const {
  model.validate();
  if (model_kind != "text_encoder" && model_kind != "text_decoder" && model_kind != "vision" &&
      model_kind != "multimodal")
    throw ConfigError("config: unknown model kind " + model_kind);
  if (featurizer != "conv" && featurizer != "pooling" && featurizer != "area")
    throw ConfigError("config: unknown featurizer " + featurizer);
  if (align_mode != "supervised" && align_mode != "unsupervised")
    throw ConfigError("config: unknown alignment mode " + align_mode);
  if (eval_split != "train" && eval_split != "validation" && eval_split != "test")
    throw ConfigError("config: unknown evaluation split " + eval_split);
  if (corpus_games <= 0) throw ConfigError("config: corpus games must be positive");
  if (schedule.max_epochs <= 0 || schedule.batch_size <= 0 || schedule.conv_batch_size <= 0 ||
      schedule.validate_every <= 0 || schedule.patience <= 0)
    throw ConfigError("config: schedule values must be positive");
  if (schedule.learning_rate <= 0) throw ConfigError("config: learning rate must be positive");
  if (schedule.p_future_mask < 0 || schedule.p_future_mask > 1 || schedule.p_replace < 0 ||
      schedule.p_replace > 1)
    throw ConfigError("config: objective probabilities must be in [0,1]");
}

std::string ExperimentConfig::serialize() const {
  std::ostringstream os;
  os << "[global]\n"
     << "seed = " << seed << "\n"
     << "output_dir = " << output_dir << "\n\n"
     << "[corpus]\n"
     << "source = " << corpus_source << "\n"
     << "seed = " << corpus_seed << "\n"
     << "games = " << corpus_games << "\n"
     << "scale = " << scale << "\n\n"
     << "[model]\n"
     << "kind = " << model_kind << "\n"
     << "d_model = " << model.d_model << "\n"
     << "n_layers = " << model.n_layers << "\n"
     << "n_heads = " << model.n_heads << "\n"
     << "d_ff = " << model.d_ff << "\n"
     << "max_seq_len = " << model.max_seq_len << "\n"
     << "d_v = " << model.d_v << "\n"
     << "d_visual_in = " << model.d_visual_in << "\n"
     << "conv_channels = " << model.conv_channels << "\n"
     << "conv_stages = " << model.conv_stages << "\n"
     << "image_side = " << model.image_side << "\n"
     << "dropout = " << model.dropout << "\n"
     << "seed = " << model.seed << "\n\n"
     << "[schedule]\n"
     << "max_epochs = " << schedule.max_epochs << "\n"
     << "validate_every = " << schedule.validate_every << "\n"
     << "patience = " << schedule.patience << "\n"
     << "batch_size = " << schedule.batch_size << "\n"
     << "conv_batch_size = " << schedule.conv_batch_size << "\n"
     << "learning_rate = " << schedule.learning_rate << "\n"
     << "scale_cap = " << schedule.scale_cap << "\n"
     << "p_future_mask = " << schedule.p_future_mask << "\n"
     << "p_replace = " << schedule.p_replace << "\n"
     << "future_loss_all_masked = " << (schedule.future_loss_all_masked ? "true" : "false")
     << "\n"
     << "max_steps_per_epoch = " << schedule.max_steps_per_epoch << "\n\n"
     << "[features]\n"
     << "featurizer = " << featurizer << "\n"
     << "encoder_checkpoint = " << encoder_checkpoint << "\n\n"
     << "[evaluation]\n"
     << "split = " << eval_split << "\n"
     << "rotate = " << (rotate ? "true" : "false") << "\n\n"
     << "[probing]\n"
     << "samples_per_game = " << probe_samples_per_game << "\n"
     << "epochs = " << probe_epochs << "\n\n"
     << "[alignment]\n"
     << "source = " << align_source << "\n"
     << "target = " << align_target << "\n"
     << "mode = " << align_mode << "\n"
     << "features = " << align_features << "\n";
  return os.str();
}

}  // namespace olab::config
