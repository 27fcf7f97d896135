#include "specfuse/config.hpp"

#include "specfuse/diffusion.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace specfuse {

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

int to_int(const KvMap& kv, const std::string& key, int fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    size_t pos = 0;
    int v = std::stoi(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + it->second + "'");
  }
}

double to_double(const KvMap& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + it->second + "'");
  }
}

bool to_bool(const KvMap& kv, const std::string& key, bool fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "' expects true/false, got '" + v + "'");
}

std::string to_str(const KvMap& kv, const std::string& key, const std::string& fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

std::vector<int> to_int_list(const KvMap& kv, const std::string& key,
                             const std::vector<int>& fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  std::vector<int> out;
  std::stringstream ss(it->second);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' expects comma-separated integers, got '" +
                        it->second + "'");
    }
  }
  if (out.empty())
    throw ConfigError("config key '" + key + "' expects a non-empty integer list");
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

KvMap parse_kv_text(const std::string& text) {
  KvMap kv;
  std::stringstream ss(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (!section.empty()) key = section + "." + key;
    kv[key] = val;
  }
  return kv;
}

KvMap parse_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_kv_text(buf.str());
}

void RunConfig::validate() const {
  if (pca_dim < 1) throw ConfigError("pca_dim must be >= 1");
  if (patch < 1 || patch % 2 == 0) throw ConfigError("patch must be odd and >= 1");
  if (train_per_class < 1) throw ConfigError("train_per_class must be >= 1");
  if (diffusion_steps < 1) throw ConfigError("diffusion_steps must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw ConfigError("beta schedule requires 0 < beta_start <= beta_end < 1");
  if (enc_filters.size() != 3) throw ConfigError("enc_filters must list 3 widths");
  if (dec_filters.size() != 3) throw ConfigError("dec_filters must list 3 widths");
  for (int f : enc_filters)
    if (f < 1) throw ConfigError("enc_filters entries must be >= 1");
  for (int f : dec_filters)
    if (f < 1) throw ConfigError("dec_filters entries must be >= 1");
  if (head_ch < 1) throw ConfigError("head_ch must be >= 1");
  if (time_dim < 2 || time_dim % 2) throw ConfigError("time_dim must be even and >= 2");
  parse_fusion_strategy(fusion_strategy);  // throws ConfigError on unknown name
  if (conv3d_ch < 1) throw ConfigError("conv3d_ch must be >= 1");
  if (head_pooling != "avg" && head_pooling != "flatten")
    throw ConfigError("head_pooling must be 'avg' or 'flatten'");
  if (text_width < 1 || text_layers < 1 || text_heads < 1)
    throw ConfigError("text_width, text_layers, text_heads must be >= 1");
  if (text_width % text_heads) throw ConfigError("text_width must be divisible by text_heads");
  if (shared_dim < 1) throw ConfigError("shared_dim must be >= 1");
  if (refiner_depth < 0) throw ConfigError("refiner_depth must be >= 0");
  if (refiner_heads < 1 || shared_dim % refiner_heads)
    throw ConfigError("shared_dim must be divisible by refiner_heads");
  if (vocab_size < 259) throw ConfigError("vocab_size must be >= 259 (byte alphabet + specials)");
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must be in [0, 1]");
  for (double l : lambdas)
    if (l < 0.0) throw ConfigError("lambda weights must be non-negative");
  double s = lambdas[0] + lambdas[1] + lambdas[2];
  if (std::abs(s - 1.0) > 1e-9)
    throw ConfigError("lambda weights must sum to 1, got " + fmt_double(s));
  if (symmetric_ce != "anchor" && symmetric_ce != "simple")
    throw ConfigError("symmetric_ce must be 'anchor' or 'simple'");
  if (temperature_init <= 0.0) throw ConfigError("temperature_init must be > 0");
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (samples_per_class < 1) throw ConfigError("samples_per_class must be >= 1");
  if (samples_per_class > train_per_class)
    throw ConfigError("samples_per_class cannot exceed train_per_class");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (inference_t < 1 || inference_t > diffusion_steps)
    throw ConfigError("inference_t must be in [1, diffusion_steps]");
  if (eval_batch < 1) throw ConfigError("eval_batch must be >= 1");
}

RunConfig RunConfig::from_map(const KvMap& kv) {
  RunConfig c;
  const KvMap known_probe = c.to_map();
  for (const auto& [k, v] : kv) {
    (void)v;
    if (!known_probe.count(k)) throw ConfigError("unknown config key: " + k);
  }
  c.pca_dim = to_int(kv, "pca_dim", c.pca_dim);
  c.patch = to_int(kv, "patch", c.patch);
  c.train_per_class = to_int(kv, "train_per_class", c.train_per_class);
  c.diffusion_steps = to_int(kv, "diffusion_steps", c.diffusion_steps);
  c.beta_start = to_double(kv, "beta_start", c.beta_start);
  c.beta_end = to_double(kv, "beta_end", c.beta_end);
  c.enc_filters = to_int_list(kv, "enc_filters", c.enc_filters);
  c.dec_filters = to_int_list(kv, "dec_filters", c.dec_filters);
  c.head_ch = to_int(kv, "head_ch", c.head_ch);
  c.time_dim = to_int(kv, "time_dim", c.time_dim);
  c.fusion_strategy = to_str(kv, "fusion_strategy", c.fusion_strategy);
  c.conv3d_ch = to_int(kv, "conv3d_ch", c.conv3d_ch);
  c.head_pooling = to_str(kv, "head_pooling", c.head_pooling);
  c.text_width = to_int(kv, "text_width", c.text_width);
  c.text_layers = to_int(kv, "text_layers", c.text_layers);
  c.text_heads = to_int(kv, "text_heads", c.text_heads);
  c.shared_dim = to_int(kv, "shared_dim", c.shared_dim);
  c.refiner_depth = to_int(kv, "refiner_depth", c.refiner_depth);
  c.refiner_heads = to_int(kv, "refiner_heads", c.refiner_heads);
  c.vocab_size = to_int(kv, "vocab_size", c.vocab_size);
  c.alpha = to_double(kv, "alpha", c.alpha);
  c.lambdas[0] = to_double(kv, "lambda_c", c.lambdas[0]);
  c.lambdas[1] = to_double(kv, "lambda_n", c.lambdas[1]);
  c.lambdas[2] = to_double(kv, "lambda_m", c.lambdas[2]);
  c.symmetric_ce = to_str(kv, "symmetric_ce", c.symmetric_ce);
  c.learnable_temperature = to_bool(kv, "learnable_temperature", c.learnable_temperature);
  c.temperature_init = to_double(kv, "temperature_init", c.temperature_init);
  c.learning_rate = to_double(kv, "learning_rate", c.learning_rate);
  c.epochs = to_int(kv, "epochs", c.epochs);
  c.samples_per_class = to_int(kv, "samples_per_class", c.samples_per_class);
  c.seed = static_cast<uint64_t>(to_double(kv, "seed", static_cast<double>(c.seed)));
  c.deterministic = to_bool(kv, "deterministic", c.deterministic);
  c.jobs = to_int(kv, "jobs", c.jobs);
  c.inference_t = to_int(kv, "inference_t", c.inference_t);
  c.eval_batch = to_int(kv, "eval_batch", c.eval_batch);
  c.validate();
  return c;
}

KvMap RunConfig::to_map() const {
  KvMap kv;
  kv["pca_dim"] = std::to_string(pca_dim);
  kv["patch"] = std::to_string(patch);
  kv["train_per_class"] = std::to_string(train_per_class);
  kv["diffusion_steps"] = std::to_string(diffusion_steps);
  kv["beta_start"] = fmt_double(beta_start);
  kv["beta_end"] = fmt_double(beta_end);
  kv["enc_filters"] = join_ints(enc_filters);
  kv["dec_filters"] = join_ints(dec_filters);
  kv["head_ch"] = std::to_string(head_ch);
  kv["time_dim"] = std::to_string(time_dim);
  kv["fusion_strategy"] = fusion_strategy;
  kv["conv3d_ch"] = std::to_string(conv3d_ch);
  kv["head_pooling"] = head_pooling;
  kv["text_width"] = std::to_string(text_width);
  kv["text_layers"] = std::to_string(text_layers);
  kv["text_heads"] = std::to_string(text_heads);
  kv["shared_dim"] = std::to_string(shared_dim);
  kv["refiner_depth"] = std::to_string(refiner_depth);
  kv["refiner_heads"] = std::to_string(refiner_heads);
  kv["vocab_size"] = std::to_string(vocab_size);
  kv["alpha"] = fmt_double(alpha);
  kv["lambda_c"] = fmt_double(lambdas[0]);
  kv["lambda_n"] = fmt_double(lambdas[1]);
  kv["lambda_m"] = fmt_double(lambdas[2]);
  kv["symmetric_ce"] = symmetric_ce;
  kv["learnable_temperature"] = learnable_temperature ? "true" : "false";
  kv["temperature_init"] = fmt_double(temperature_init);
  kv["learning_rate"] = fmt_double(learning_rate);
  kv["epochs"] = std::to_string(epochs);
  kv["samples_per_class"] = std::to_string(samples_per_class);
  kv["seed"] = std::to_string(seed);
  kv["deterministic"] = deterministic ? "true" : "false";
  kv["jobs"] = std::to_string(jobs);
  kv["inference_t"] = std::to_string(inference_t);
  kv["eval_batch"] = std::to_string(eval_batch);
  return kv;
}

RunConfig RunConfig::from_file(const std::string& path) {
  return from_map(parse_kv_file(path));
}

}  // namespace specfuse
