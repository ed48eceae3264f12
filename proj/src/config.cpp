#include "crowding/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "crowding/errors.hpp"

namespace crowding {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view expected, std::string_view got) {
  throw ConfigError("key '" + std::string(key) + "': expected " + std::string(expected) +
                    ", got '" + std::string(got) + "'");
}

double to_double(std::string_view key, const std::string& v) {
  double d = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), d);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(d))
    bad_value(key, "a finite number", v);
  return d;
}

std::uint64_t to_unsigned(std::string_view key, const std::string& v) {
  std::uint64_t n = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, "a non-negative integer", v);
  return n;
}

bool to_bool(std::string_view key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(key, "true or false", v);
}

std::vector<std::string> to_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
std::string join(const std::vector<T>& v, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + f(v[i]);
  return out;
}

struct Field {
  ConfigKey key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

using S = ConfigSection;

template <class T>
using Access = T& (*)(RunConfig&);

template <class T>
const T& view(Access<T> a, const RunConfig& c) {
  return a(const_cast<RunConfig&>(c));
}

Field real(std::string name, S s, Access<double> a, std::string desc) {
  return {{name, s, "number", std::move(desc)},
          [a, name](RunConfig& c, const std::string& v) { a(c) = to_double(name, v); },
          [a](const RunConfig& c) { return fmt(view(a, c)); }};
}

Field count(std::string name, S s, Access<std::size_t> a, std::string desc) {
  return {{name, s, "integer", std::move(desc)},
          [a, name](RunConfig& c, const std::string& v) { a(c) = to_unsigned(name, v); },
          [a](const RunConfig& c) { return std::to_string(view(a, c)); }};
}

Field flag(std::string name, S s, Access<bool> a, std::string desc) {
  return {{name, s, "bool", std::move(desc)},
          [a, name](RunConfig& c, const std::string& v) { a(c) = to_bool(name, v); },
          [a](const RunConfig& c) { return std::string(view(a, c) ? "true" : "false"); }};
}

Field maybe_count(std::string name, S s, Access<std::optional<std::size_t>> a, std::string desc) {
  return {{name, s, "integer or auto", std::move(desc)},
          [a, name](RunConfig& c, const std::string& v) {
            if (v == "auto")
              a(c).reset();
            else
              a(c) = to_unsigned(name, v);
          },
          [a](const RunConfig& c) {
            const auto& v = view(a, c);
            return v ? std::to_string(*v) : std::string("auto");
          }};
}

Field real_list(std::string name, S s, Access<std::vector<double>> a, std::string desc) {
  return {{name, s, "number list", std::move(desc)},
          [a, name](RunConfig& c, const std::string& v) {
            std::vector<double> out;
            for (const auto& item : to_list(v)) out.push_back(to_double(name, item));
            a(c) = std::move(out);
          },
          [a](const RunConfig& c) {
            return join<double>(view(a, c), [](const double& d) { return fmt(d); });
          }};
}

Field seed_list(std::string name, S s, Access<std::vector<std::uint64_t>> a, std::string desc) {
  return {{name, s, "integer list", std::move(desc)},
          [a, name](RunConfig& c, const std::string& v) {
            std::vector<std::uint64_t> out;
            for (const auto& item : to_list(v)) out.push_back(to_unsigned(name, item));
            a(c) = std::move(out);
          },
          [a](const RunConfig& c) {
            return join<std::uint64_t>(view(a, c),
                                       [](const std::uint64_t& n) { return std::to_string(n); });
          }};
}

Field word_list(std::string name, S s, Access<std::vector<std::string>> a, std::string desc) {
  return {{name, s, "name list", std::move(desc)},
          [a](RunConfig& c, const std::string& v) { a(c) = to_list(v); },
          [a](const RunConfig& c) {
            return join<std::string>(view(a, c), [](const std::string& w) { return w; });
          }};
}

#define AT(expr) [](RunConfig& c) -> auto& { return expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = [] {
    std::vector<Field> v;
    v.push_back({{"seed", S::Common, "integer", "seed for data synthesis and training"},
                 [](RunConfig& c, const std::string& x) { c.seed = to_unsigned("seed", x); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }});

    v.push_back(count("num_classes", S::Synth, AT(c.synth.num_classes), "number of classes"));
    v.push_back(count("num_train", S::Synth, AT(c.synth.num_train), "training instances"));
    v.push_back(maybe_count("num_validation", S::Synth, AT(c.synth.num_validation),
                            "validation instances (auto: 15% of all)"));
    v.push_back(maybe_count("num_test", S::Synth, AT(c.synth.num_test),
                            "test instances (auto: 15% of all)"));
    v.push_back(count("num_annotators", S::Synth, AT(c.synth.num_annotators), "annotators"));
    v.push_back(count("dim", S::Synth, AT(c.synth.dim), "instance feature dimension"));
    v.push_back(real("reliability_min", S::Synth, AT(c.synth.reliability_min),
                     "lower bound of annotator reliability"));
    v.push_back(real("reliability_max", S::Synth, AT(c.synth.reliability_max),
                     "upper bound of annotator reliability"));
    v.push_back(real("annotations_per_instance", S::Synth, AT(c.synth.annotations_per_instance),
                     "mean redundancy over training instances"));
    v.push_back(real("difficulty_sensitivity", S::Synth, AT(c.synth.difficulty_sensitivity),
                     "strength of instance-dependent label flips"));
    v.push_back(real("class_separation", S::Synth, AT(c.synth.class_separation),
                     "radius of the class centroid circle"));
    v.push_back(count("annotator_feature_dim", S::Synth, AT(c.synth.annotator_feature_dim),
                      "dense annotator features (0: one-hot ids)"));

    v.push_back(real("lambda", S::Train, AT(c.train.lambda), "information loss weight"));
    v.push_back(real("entropy_threshold", S::Train, AT(c.train.entropy_threshold),
                     "normalised entropy splitting generator and classifier updates"));
    v.push_back({{"mu_policy", S::Train, "fixed | baseline | grid",
                  "how the CRM baseline mu is chosen"},
                 [](RunConfig& c, const std::string& x) {
                   if (x == "fixed")
                     c.train.mu_policy = MuPolicy::Fixed;
                   else if (x == "baseline")
                     c.train.mu_policy = MuPolicy::Baseline;
                   else if (x == "grid")
                     c.train.mu_policy = MuPolicy::Grid;
                   else
                     bad_value("mu_policy", "fixed, baseline or grid", x);
                 },
                 [](const RunConfig& c) {
                   switch (c.train.mu_policy) {
                     case MuPolicy::Fixed: return std::string("fixed");
                     case MuPolicy::Baseline: return std::string("baseline");
                     case MuPolicy::Grid: break;
                   }
                   return std::string("grid");
                 }});
    v.push_back(real("mu", S::Train, AT(c.train.mu), "mu under the fixed policy"));
    v.push_back(real_list("mu_grid", S::Train, AT(c.train.mu_grid),
                          "grid policy: multiples of the running mean of delta"));
    v.push_back(real("lr_pretrain", S::Train, AT(c.train.lr_pretrain),
                     "learning rate of classifier pretraining and baselines"));
    v.push_back(real("lr_classifier", S::Train, AT(c.train.lr_classifier),
                     "classifier learning rate during adversarial epochs"));
    v.push_back(real("lr_generator", S::Train, AT(c.train.lr_generator), "generator learning rate"));
    v.push_back(real("lr_discriminator", S::Train, AT(c.train.lr_discriminator),
                     "discriminator and auxiliary network learning rate"));
    v.push_back(count("inner_steps", S::Train, AT(c.train.inner_steps), "updates per module per epoch"));
    v.push_back(count("pretrain_epochs", S::Train, AT(c.train.pretrain_epochs),
                      "crowd-layer pretraining epochs"));
    v.push_back(count("gen_pretrain_epochs", S::Train, AT(c.train.gen_pretrain_epochs),
                      "generator maximum-likelihood epochs"));
    v.push_back(count("disc_pretrain_epochs", S::Train, AT(c.train.disc_pretrain_epochs),
                      "discriminator pretraining rounds"));
    v.push_back(count("epochs", S::Train, AT(c.train.epochs), "adversarial epochs"));
    v.push_back(count("batch_size", S::Train, AT(c.train.batch_size), "pretraining minibatch size"));
    v.push_back(count("max_grid_pairs", S::Train, AT(c.train.max_grid_pairs),
                      "cap on logged instance-annotator pairs per epoch"));
    v.push_back(real("beta", S::Train, AT(c.train.beta), "discriminator output L2 weight"));
    v.push_back(flag("one_step", S::Train, AT(c.train.one_step),
                     "joint classifier and generator update instead of two steps"));
    v.push_back({{"variant", S::Train, "name", "full, CrowdG, CrowdInG_U, CrowdInG_I or CrowdInG_R"},
                 [](RunConfig& c, const std::string& x) {
                   try {
                     c.train.variant = parse_variant(x);
                   } catch (const std::invalid_argument&) {
                     bad_value("variant", "full, CrowdG, CrowdInG_U, CrowdInG_I or CrowdInG_R", x);
                   }
                 },
                 [](const RunConfig& c) { return std::string(variant_name(c.train.variant)); }});
    v.push_back(count("classifier_hidden", S::Train, AT(c.train.network.classifier_hidden),
                      "classifier hidden units"));
    v.push_back(real("dropout", S::Train, AT(c.train.network.dropout), "classifier dropout rate"));
    v.push_back(count("generator_hidden1", S::Train, AT(c.train.network.generator_hidden1),
                      "generator first hidden layer"));
    v.push_back(count("generator_hidden2", S::Train, AT(c.train.network.generator_hidden2),
                      "generator second hidden layer"));
    v.push_back(count("noise_dim", S::Train, AT(c.train.network.noise_dim), "generator noise width"));
    v.push_back(flag("generator_uses_instance", S::Train,
                     AT(c.train.network.generator_uses_instance), "feed instance features to G"));
    v.push_back(flag("generator_uses_annotator", S::Train,
                     AT(c.train.network.generator_uses_annotator), "feed annotator features to G"));
    v.push_back(count("embed_dim", S::Train, AT(c.train.network.embed_dim),
                      "discriminator encoder width"));
    v.push_back(count("class_embed_dim", S::Train, AT(c.train.network.class_embed_dim),
                      "class embedding width fed to the auxiliary network"));
    v.push_back(count("aux_hidden1", S::Train, AT(c.train.network.aux_hidden1),
                      "auxiliary network first hidden layer"));
    v.push_back(count("aux_hidden2", S::Train, AT(c.train.network.aux_hidden2),
                      "auxiliary network second hidden layer"));
    v.push_back(flag("lca", S::Train, AT(c.train.network.lca), "label correlation aggregation in D"));

    v.push_back({{"sweep_axis", S::Sweep, "name", "removal, lambda or threshold"},
                 [](RunConfig& c, const std::string& x) { c.sweep.axis = x; },
                 [](const RunConfig& c) { return c.sweep.axis; }});
    v.push_back(real_list("sweep_values", S::Sweep, AT(c.sweep.values), "axis values"));
    v.push_back(word_list("sweep_methods", S::Sweep, AT(c.sweep.methods),
                          "crowding, dl-cl, dl-mv or variant names"));
    v.push_back(seed_list("seeds", S::Sweep, AT(c.sweep.seeds), "seeds per cell"));
    v.push_back(word_list("ablate_variants", S::Sweep, AT(c.sweep.variants),
                          "variants for the ablation table"));
    return v;
  }();
  return f;
}

#undef AT

bool allowed_in(S s, const std::vector<S>& allowed) {
  return s == S::Common || std::find(allowed.begin(), allowed.end(), s) != allowed.end();
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

void validate(const RunConfig& c, const std::vector<S>& allowed) {
  if (allowed_in(S::Train, allowed)) {
    const auto& t = c.train;
    require(t.lambda >= 0.0, "key 'lambda': must be >= 0");
    require(t.entropy_threshold >= 0.0 && t.entropy_threshold <= 1.0,
            "key 'entropy_threshold': must lie in [0, 1]");
    require(!t.mu_grid.empty(), "key 'mu_grid': needs at least one value");
    require(t.lr_pretrain > 0 && t.lr_classifier > 0 && t.lr_generator > 0 &&
                t.lr_discriminator > 0,
            "learning rates must be > 0");
    require(t.inner_steps > 0, "key 'inner_steps': must be > 0");
    require(t.batch_size > 0, "key 'batch_size': must be > 0");
    require(t.max_grid_pairs > 0, "key 'max_grid_pairs': must be > 0");
    require(t.beta >= 0.0, "key 'beta': must be >= 0");
    require(t.network.dropout >= 0.0 && t.network.dropout < 1.0, "key 'dropout': must lie in [0, 1)");
    const auto& n = t.network;
    require(n.classifier_hidden && n.generator_hidden1 && n.generator_hidden2 && n.embed_dim &&
                n.class_embed_dim && n.aux_hidden1 && n.aux_hidden2,
            "network widths must be > 0");
  }
  if (allowed_in(S::Sweep, allowed)) {
    const auto& s = c.sweep;
    require(s.axis == "removal" || s.axis == "lambda" || s.axis == "threshold",
            "key 'sweep_axis': expected removal, lambda or threshold, got '" + s.axis + "'");
    require(!s.values.empty(), "key 'sweep_values': needs at least one value");
    require(!s.seeds.empty(), "key 'seeds': needs at least one seed");
    for (const auto& m : s.methods)
      require(is_known_method(m), "key 'sweep_methods': unknown method '" + m + "'");
    for (const auto& v : s.variants) {
      try {
        parse_variant(v);
      } catch (const std::invalid_argument&) {
        throw ConfigError("key 'ablate_variants': unknown variant '" + v + "'");
      }
    }
  }
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

RunConfig parse_run_config(std::string_view text, std::vector<ConfigSection> allowed,
                           std::string_view source) {
  std::map<std::string, const Field*> by_name;
  for (const auto& f : fields()) by_name[f.key.name] = &f;

  RunConfig cfg;
  std::map<std::string, std::size_t> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::string where = std::string(source) + ":" + std::to_string(lineno) + ": ";
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    const auto it = by_name.find(key);
    if (it == by_name.end() || !allowed_in(it->second->key.section, allowed))
      throw ConfigError(where + "unknown key '" + key + "'");
    if (auto [pos, fresh] = seen.emplace(key, lineno); !fresh)
      throw ConfigError(where + "key '" + key + "' repeated (first on line " +
                        std::to_string(pos->second) + ")");
    try {
      it->second->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  cfg.train.seed = cfg.seed;
  validate(cfg, allowed);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, std::vector<ConfigSection> allowed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), std::move(allowed), path.string());
}

ConfigEcho resolved_config(const RunConfig& cfg, std::vector<ConfigSection> allowed) {
  ConfigEcho out;
  for (const auto& f : fields())
    if (allowed_in(f.key.section, allowed)) out.emplace_back(f.key.name, f.get(cfg));
  return out;
}

std::string format_run_config(const RunConfig& cfg, std::vector<ConfigSection> allowed) {
  std::string out;
  for (const auto& [k, v] : resolved_config(cfg, std::move(allowed))) out += k + " = " + v + '\n';
  return out;
}

std::string config_reference() {
  static const char* names[] = {"common", "synth", "train", "sweep"};
  const RunConfig defaults;
  std::string out = "| key | section | type | default | description |\n|---|---|---|---|---|\n";
  for (const auto& f : fields())
    out += "| `" + f.key.name + "` | " + names[static_cast<int>(f.key.section)] + " | " +
           f.key.type + " | `" + f.get(defaults) + "` | " + f.key.description + " |\n";
  return out;
}

}  // namespace crowding
