#include "forge/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "forge/errors.hpp"

namespace forge {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty())
    throw ConfigError(key + ": cannot parse \"" + value + "\" as a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(key + ": expected true or false, got \"" + value + "\"");
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

struct Key {
  const char* name;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define FORGE_SIZE_KEY(NAME, FIELD)                                                     \
  Key {                                                                                 \
    NAME, [](RunConfig& c, const std::string& k, const std::string& v) {                \
      c.FIELD = parse_number<std::size_t>(k, v);                                        \
    },                                                                                  \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                      \
  }
#define FORGE_DOUBLE_KEY(NAME, FIELD)                                                   \
  Key {                                                                                 \
    NAME, [](RunConfig& c, const std::string& k, const std::string& v) {                \
      c.FIELD = parse_number<double>(k, v);                                             \
    },                                                                                  \
        [](const RunConfig& c) { return format_double(c.FIELD); }                       \
  }

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = {
      Key{"seed",
          [](RunConfig& c, const std::string& k, const std::string& v) {
            c.apply_seed(parse_number<std::uint64_t>(k, v));
            c.seed_given = true;
          },
          [](const RunConfig& c) { return std::to_string(c.seed); }},
      FORGE_SIZE_KEY("model.vocab_size", model.vocab_size),
      FORGE_SIZE_KEY("model.d_model", model.d_model),
      FORGE_SIZE_KEY("model.n_heads", model.n_heads),
      FORGE_SIZE_KEY("model.n_layers", model.n_layers),
      FORGE_SIZE_KEY("model.max_seq_len", model.max_seq_len),
      FORGE_SIZE_KEY("model.ffn_multiplier", model.ffn_multiplier),
      Key{"model.layout",
          [](RunConfig& c, const std::string&, const std::string& v) {
            c.model.layout = parse_attention_layout(v);
          },
          [](const RunConfig& c) { return std::string(to_string(c.model.layout)); }},
      FORGE_SIZE_KEY("lora.rank", lora.rank),
      FORGE_DOUBLE_KEY("lora.alpha", lora.alpha),
      FORGE_DOUBLE_KEY("lora.dropout", lora.dropout),
      Key{"lora.targets",
          [](RunConfig& c, const std::string&, const std::string& v) {
            c.lora.target_names = split_list(v);
          },
          [](const RunConfig& c) { return join(c.lora.target_names); }},
      FORGE_DOUBLE_KEY("train.lr", train.learning_rate),
      FORGE_SIZE_KEY("train.batch", train.batch_size),
      FORGE_SIZE_KEY("train.epochs", train.epochs),
      FORGE_SIZE_KEY("train.seq_len", train.train_seq_len),
      Key{"train.mask_policy",
          [](RunConfig& c, const std::string&, const std::string& v) {
            c.train.mask_policy = parse_mask_policy(v);
          },
          [](const RunConfig& c) { return std::string(to_string(c.train.mask_policy)); }},
      FORGE_DOUBLE_KEY("train.weight_decay", train.weight_decay),
      FORGE_DOUBLE_KEY("pretrain.lr", pretrain.learning_rate),
      FORGE_SIZE_KEY("pretrain.batch", pretrain.batch_size),
      FORGE_SIZE_KEY("pretrain.seq_len", pretrain.seq_len),
      FORGE_SIZE_KEY("pretrain.steps", pretrain.steps),
      Key{"data.prompt_version",
          [](RunConfig& c, const std::string&, const std::string& v) {
            c.prompt_version = parse_prompt_version(v);
          },
          [](const RunConfig& c) { return std::string(to_string(c.prompt_version)); }},
      Key{"data.exclude",
          [](RunConfig& c, const std::string& k, const std::string& v) {
            c.exclude.clear();
            for (const auto& label : split_list(v)) {
              const auto cat = parse_category(label);
              if (!cat) throw ConfigError(k + ": unknown category \"" + label + "\"");
              c.exclude.push_back(*cat);
            }
          },
          [](const RunConfig& c) {
            std::vector<std::string> labels;
            for (Category cat : c.exclude) labels.emplace_back(to_string(cat));
            return join(labels);
          }},
      Key{"eval.shots",
          [](RunConfig& c, const std::string& k, const std::string& v) {
            c.eval.shots.clear();
            for (const auto& s : split_list(v)) c.eval.shots.push_back(parse_number<std::size_t>(k, s));
          },
          [](const RunConfig& c) {
            std::vector<std::string> items;
            for (auto k : c.eval.shots) items.push_back(std::to_string(k));
            return join(items);
          }},
      Key{"eval.prompt_version",
          [](RunConfig& c, const std::string&, const std::string& v) {
            if (v == "task")
              c.eval.prompt_version.reset();
            else
              c.eval.prompt_version = parse_prompt_version(v);
          },
          [](const RunConfig& c) {
            return c.eval.prompt_version ? std::string(to_string(*c.eval.prompt_version))
                                         : std::string("task");
          }},
      Key{"eval.length_normalize",
          [](RunConfig& c, const std::string& k, const std::string& v) {
            c.eval.length_normalize = parse_bool(k, v);
          },
          [](const RunConfig& c) { return std::string(c.eval.length_normalize ? "true" : "false"); }},
      FORGE_DOUBLE_KEY("generate.temperature", generate.temperature),
      FORGE_DOUBLE_KEY("generate.repetition_penalty", generate.repetition_penalty),
      FORGE_SIZE_KEY("generate.max_new_tokens", generate.max_new_tokens),
  };
  return table;
}

}  // namespace

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& k : key_table()) {
    if (key == k.name) {
      try {
        k.set(*this, key, trim(value));
      } catch (const ConfigError& e) {
        const std::string what = e.what();
        if (what.rfind(key, 0) == 0) throw;
        throw ConfigError(key + ": " + what);
      }
      return;
    }
  }
  throw ConfigError("unknown config key \"" + key + "\"");
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ": line " + std::to_string(n) + ": expected key = value");
    try {
      set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ": line " + std::to_string(n) + ": " + e.what());
    }
  }
}

void RunConfig::apply_seed(std::uint64_t value) {
  seed = value;
  model.seed = value;
  lora.seed = value;
  train.seed = value;
  pretrain.seed = value;
  generate.seed = value;
}

void RunConfig::validate() const {
  model.validate();
  lora.validate();
  train.validate(model);
  generate.validate();
  if (eval.shots.empty()) throw ConfigError("eval.shots must list at least one k");
  for (auto k : eval.shots)
    if (k > 3) throw ConfigError("eval.shots entries must lie in 0..3");
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : key_table()) out.emplace_back(k.name, k.get(*this));
  return out;
}

std::string RunConfig::echo() const {
  std::string out = "# effective config\n";
  for (const auto& [k, v] : entries()) out += k + " = " + v + "\n";
  return out;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& k : key_table()) out.emplace_back(k.name);
  return out;
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> explicit_seed) {
  if (explicit_seed) return *explicit_seed;
  if (const char* env = std::getenv("INSTRUCT_FORGE_SEED"); env != nullptr && *env != '\0') {
    try {
      return parse_number<std::uint64_t>("INSTRUCT_FORGE_SEED", trim(env));
    } catch (const ConfigError&) {
      throw ConfigError(std::string("INSTRUCT_FORGE_SEED must be a non-negative integer, got \"") +
                        env + "\"");
    }
  }
  return 0;
}

}  // namespace forge
