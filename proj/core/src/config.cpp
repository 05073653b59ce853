#include "evssm/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "config_json.hpp"

namespace evssm {

using nlohmann::json;

void RunConfig::validate() const {
  model.validate();
  train.validate();
  synth.validate();
  if (precision != "float" && precision != "double") {
    throw std::runtime_error("config: precision must be 'float' or 'double'");
  }
  if (ckpt_every < 1) throw std::runtime_error("config: ckpt_every must be >= 1");
  if (out_dir.empty()) throw std::runtime_error("config: out_dir must not be empty");
}

namespace {

json run_to_json(const RunConfig& c) {
  return json{{"model", detail::model_to_json(c.model)},
              {"train", detail::train_to_json(c.train)},
              {"synth", detail::synth_to_json(c.synth)},
              {"data", c.data},
              {"out_dir", c.out_dir},
              {"seed", c.seed},
              {"precision", c.precision},
              {"ckpt_every", c.ckpt_every}};
}

void run_from_json(const json& j, RunConfig* c) {
  detail::model_from_json(j.at("model"), &c->model);
  detail::train_from_json(j.at("train"), &c->train);
  detail::synth_from_json(j.at("synth"), &c->synth);
  j.at("data").get_to(c->data);
  j.at("out_dir").get_to(c->out_dir);
  j.at("seed").get_to(c->seed);
  j.at("precision").get_to(c->precision);
  j.at("ckpt_every").get_to(c->ckpt_every);
}

// Recursively merge src into dst, rejecting keys absent from dst and scalar
// type changes. Arrays and scalars replace wholesale.
void merge_checked(json* dst, const json& src, const std::string& prefix) {
  if (!src.is_object()) {
    throw std::runtime_error("config: expected an object at '" +
                             (prefix.empty() ? "<root>" : prefix) + "'");
  }
  for (auto it = src.begin(); it != src.end(); ++it) {
    std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!dst->contains(it.key())) {
      throw std::runtime_error("config: unknown key '" + path + "'");
    }
    json& slot = (*dst)[it.key()];
    const json& val = it.value();
    if (slot.is_object()) {
      merge_checked(&slot, val, path);
      continue;
    }
    bool ok = (slot.is_number() && val.is_number()) ||
              (slot.is_boolean() && val.is_boolean()) ||
              (slot.is_string() && val.is_string()) || (slot.is_array() && val.is_array());
    if (!ok) {
      throw std::runtime_error("config: key '" + path + "' expects " +
                               std::string(slot.type_name()) + ", got " +
                               std::string(val.type_name()));
    }
    slot = val;
  }
}

void apply_override(json* dst, const std::string& spec) {
  auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::runtime_error("config: override '" + spec + "' is not key=value");
  }
  std::string key = spec.substr(0, eq);
  std::string value = spec.substr(eq + 1);

  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = value;  // bare strings need no quotes
  }

  // walk the dotted path, building a single-key object chain
  json patch = parsed;
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (true) {
    std::size_t dot = key.find('.', pos);
    parts.push_back(key.substr(pos, dot == std::string::npos ? dot : dot - pos));
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
    patch = json{{*it, patch}};
  }
  merge_checked(dst, patch, "");
}

}  // namespace

RunConfig load_run_config(const std::string& text, const std::vector<std::string>& overrides) {
  json merged = run_to_json(RunConfig{});
  if (!text.empty()) {
    json file;
    try {
      file = json::parse(text);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(std::string("config: ") + e.what());
    }
    merge_checked(&merged, file, "");
  }
  for (const std::string& o : overrides) apply_override(&merged, o);

  RunConfig out;
  run_from_json(merged, &out);
  return out;
}

RunConfig load_run_config_file(const std::filesystem::path& path,
                               const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_run_config(ss.str(), overrides);
}

std::string run_config_json(const RunConfig& cfg) {
  return run_to_json(cfg).dump(2) + "\n";
}

}  // namespace evssm
