#include "distgp/run_config.hpp"

#include "distgp/error.hpp"

namespace distgp {

nlohmann::json parse_config_text(const std::string& text, const std::string& origin) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // nlohmann reports a byte offset; translate it to line and column.
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw Error(ErrorKind::Config, origin + ":" + std::to_string(line) + ":" + std::to_string(col) +
                                       ": malformed JSON (" + e.what() + ")");
  }
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorKind::Config, "override '" + assignment + "' is not of the form key.path=value");
  }
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  if (!j.is_object()) j = nlohmann::json::object();
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw Error(ErrorKind::Config, "override '" + assignment + "' has an empty key");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    nlohmann::json& next = (*node)[key];
    if (next.is_null()) next = nlohmann::json::object();
    if (!next.is_object()) throw Error(ErrorKind::Config, "override '" + assignment + "': '" + key + "' is not a section");
    node = &next;
    start = dot + 1;
  }
}

namespace {

nlohmann::json section(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) return nlohmann::json::object();
  if (!j.at(key).is_object()) throw Error(ErrorKind::Config, std::string("'") + key + "' must be an object");
  return j.at(key);
}

OodConfig ood_config_from_json(const nlohmann::json& j) {
  OodConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "mode") c.mode = heatmap_mode_from_string(value.get<std::string>());
      else if (key == "fpr_levels") c.fpr_levels = value.get<std::vector<double>>();
      else if (key == "png") c.png = value.get<bool>();
      else throw Error(ErrorKind::Config, "unknown ood key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("ood config: ") + e.what());
  }
  if (c.fpr_levels.empty()) throw Error(ErrorKind::Config, "ood.fpr_levels is empty");
  for (double f : c.fpr_levels) {
    if (!(f > 0.0 && f < 1.0)) throw Error(ErrorKind::Config, "ood.fpr_levels entries must be in (0, 1)");
  }
  return c;
}

}  // namespace

RunConfig resolve_run_config(const nlohmann::json& j, std::optional<std::uint64_t> seed_override) {
  if (!j.is_object()) throw Error(ErrorKind::Config, "run config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "seed" && key != "data" && key != "model" && key != "train" && key != "ood") {
      throw Error(ErrorKind::Config, "unknown top-level key '" + key + "'");
    }
  }
  RunConfig c;
  try {
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("seed: ") + e.what());
  }
  if (seed_override) c.seed = *seed_override;

  auto seeded = [&](nlohmann::json s) {
    if (seed_override || !s.contains("seed")) s["seed"] = c.seed;
    return s;
  };
  nlohmann::json data = seeded(section(j, "data"));
  if (data.contains("dir")) {
    if (!data["dir"].is_string()) throw Error(ErrorKind::Config, "data.dir must be a string");
    c.data_dir = data["dir"].get<std::string>();
    data.erase("dir");
  }
  c.data = dataset_config_from_json(data);
  c.data.validate();
  c.model = segnet_config_from_json(seeded(section(j, "model")));
  c.train = train_config_from_json(seeded(section(j, "train")));
  c.train.validate();
  c.ood = ood_config_from_json(section(j, "ood"));
  if (c.model.num_classes != c.data.num_classes) {
    throw Error(ErrorKind::Config, "model.num_classes and data.num_classes differ");
  }
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json data = to_json(c.data);
  if (c.data_dir) data["dir"] = *c.data_dir;
  return {{"seed", c.seed},
          {"data", data},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"ood", {{"mode", to_string(c.ood.mode)}, {"fpr_levels", c.ood.fpr_levels}, {"png", c.ood.png}}}};
}

}  // namespace distgp
