#include "specfuse/text.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace specfuse {

using nlohmann::json;

// ---------------- manifest ----------------

std::vector<std::string> PromptManifest::corpus() const {
  std::vector<std::string> out;
  for (const auto& c : classes) {
    out.push_back(c.self_categorical);
    for (const auto& d : c.differentiated) out.push_back(d);
  }
  return out;
}

void validate_manifest(const PromptManifest& m) {
  if (m.classes.empty()) throw DataError("manifest: no classes");
  std::set<std::string> names;
  for (const auto& c : m.classes) {
    if (c.name.empty()) throw DataError("manifest: empty class name");
    if (!names.insert(c.name).second)
      throw DataError("manifest: duplicate class name '" + c.name + "'");
    if (c.self_categorical.empty())
      throw DataError("manifest: empty self-categorical prompt for '" + c.name +
                      "'");
    for (const auto& d : c.differentiated)
      if (d.empty())
        throw DataError("manifest: empty differentiated prompt for '" + c.name +
                        "'");
  }
}

PromptManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("missing manifest file: " + path);
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw DataError("bad manifest: " + std::string(e.what()));
  }
  PromptManifest m;
  for (const auto& jc : j.at("classes")) {
    PromptClass c;
    c.name = jc.at("name").get<std::string>();
    if (jc.contains("self_categorical"))
      c.self_categorical = jc.at("self_categorical").get<std::string>();
    else
      c.self_categorical = self_categorical_template(c.name);
    auto diffs = jc.at("differentiated").get<std::vector<std::string>>();
    if (diffs.size() != 3)
      throw DataError("manifest: class '" + c.name + "' has " +
                      std::to_string(diffs.size()) +
                      " differentiated prompts, expected exactly 3");
    std::copy(diffs.begin(), diffs.end(), c.differentiated.begin());
    m.classes.push_back(std::move(c));
  }
  validate_manifest(m);
  return m;
}

void save_manifest(const PromptManifest& m, const std::string& path) {
  json j;
  j["classes"] = json::array();
  for (const auto& c : m.classes) {
    json jc;
    jc["name"] = c.name;
    jc["self_categorical"] = c.self_categorical;
    jc["differentiated"] = {c.differentiated[0], c.differentiated[1],
                            c.differentiated[2]};
    j["classes"].push_back(jc);
  }
  std::ofstream f(path);
  f << j.dump(2) << "\n";
}

// ---------------- BPE ----------------

std::string BPEVocab::token_bytes(int id) const {
  if (id < kByteBase) return "";
  if (id < kByteBase + 256) return std::string(1, (char)(unsigned char)(id - kByteBase));
  const auto& m = merges.at((size_t)(id - kByteBase - 256));
  return token_bytes(m.first) + token_bytes(m.second);
}

void BPEVocab::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write merges file: " + path);
  for (const auto& m : merges) f << m.first << " " << m.second << "\n";
}

BPEVocab BPEVocab::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("missing merges file: " + path);
  BPEVocab v;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    int a, b;
    if (!(is >> a >> b)) throw DataError("bad merges line: " + line);
    v.merges.push_back({a, b});
  }
  return v;
}

namespace {
std::vector<int> bytes_to_ids(const std::string& text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char ch : text) ids.push_back(kByteBase + ch);
  return ids;
}

void apply_merge(std::vector<int>& seq, int a, int b, int merged) {
  size_t w = 0;
  for (size_t r = 0; r < seq.size();) {
    if (r + 1 < seq.size() && seq[r] == a && seq[r + 1] == b) {
      seq[w++] = merged;
      r += 2;
    } else {
      seq[w++] = seq[r++];
    }
  }
  seq.resize(w);
}
}  // namespace

BPEVocab build_vocab(const std::vector<std::string>& corpus, int target_size) {
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");
  int base = kByteBase + 256;
  if (target_size < base)
    throw DataError("build_vocab: target_size below base alphabet size " +
                    std::to_string(base));
  std::vector<std::vector<int>> seqs;
  for (const auto& s : corpus) seqs.push_back(bytes_to_ids(to_lower(s)));

  BPEVocab v;
  while (v.vocab_size() < target_size) {
    std::map<std::pair<int, int>, int64_t> counts;
    for (const auto& seq : seqs)
      for (size_t i = 0; i + 1 < seq.size(); ++i)
        ++counts[{seq[i], seq[i + 1]}];
    std::pair<int, int> best{-1, -1};
    int64_t best_count = 1;  // require count >= 2
    for (const auto& [pair, n] : counts)
      if (n > best_count || (n == best_count && best.first >= 0 && pair < best)) {
        best = pair;
        best_count = n;
      }
    if (best.first < 0) break;
    int merged = v.vocab_size();
    v.merges.push_back(best);
    for (auto& seq : seqs) apply_merge(seq, best.first, best.second, merged);
  }
  return v;
}

TokenSequence tokenize(const std::string& text, const BPEVocab& vocab) {
  std::vector<int> seq = bytes_to_ids(to_lower(text));
  // greedy: always apply the lowest-rank merge present
  std::map<std::pair<int, int>, int> rank;
  for (size_t i = 0; i < vocab.merges.size(); ++i)
    rank[vocab.merges[i]] = (int)i;
  while (seq.size() >= 2) {
    int best_rank = INT32_MAX;
    std::pair<int, int> best{-1, -1};
    for (size_t i = 0; i + 1 < seq.size(); ++i) {
      auto it = rank.find({seq[i], seq[i + 1]});
      if (it != rank.end() && it->second < best_rank) {
        best_rank = it->second;
        best = it->first;
      }
    }
    if (best.first < 0) break;
    apply_merge(seq, best.first, best.second, kByteBase + 256 + best_rank);
  }

  TokenSequence out;
  out.ids.fill(kPadId);
  out.ids[0] = kSotId;
  int n = std::min((int)seq.size(), kMaxTokens - 2);
  for (int i = 0; i < n; ++i) out.ids[i + 1] = seq[(size_t)i];
  out.ids[n + 1] = kEotId;
  out.valid_len = n + 2;
  return out;
}

std::string detokenize(const TokenSequence& seq, const BPEVocab& vocab) {
  std::string out;
  for (int i = 0; i < seq.valid_len; ++i) out += vocab.token_bytes(seq.ids[(size_t)i]);
  return out;
}

// ---------------- text transformer ----------------

void TextEncoder::init(ParamStore& ps, const TextEncoderConfig& cfg,
                       int vocab_size, Rng& rng) {
  cfg_ = cfg;
  token_emb_ = ps.create("text.token_emb", {vocab_size, cfg.width});
  pos_emb_ = ps.create("text.pos_emb", {kMaxTokens, cfg.width});
  init_normal(token_emb_, rng, 0.02);
  init_normal(pos_emb_, rng, 0.01);
  blocks_.resize((size_t)cfg.layers);
  for (int i = 0; i < cfg.layers; ++i)
    blocks_[(size_t)i].init(ps, "text.block" + std::to_string(i), cfg.width,
                            cfg.heads, rng);
  ln_final_.init(ps, "text.ln_final", cfg.width);
  proj_.init(ps, "text.proj", cfg.width, cfg.shared_dim, rng);
}

Var TextEncoder::encode(const std::vector<TokenSequence>& batch) const {
  int B = (int)batch.size();
  int L = 2;
  for (const auto& t : batch) L = std::max(L, t.valid_len);
  std::vector<int> flat((size_t)B * L);
  std::vector<int> eot(B);
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < L; ++i) flat[(size_t)b * L + i] = batch[(size_t)b].ids[(size_t)i];
    eot[(size_t)b] = batch[(size_t)b].valid_len - 1;
  }
  Var x = reshape(embedding_rows(token_emb_, flat), {B, L, cfg_.width});
  Var pos = slice(pos_emb_, 0, 0, L);
  x = add_batch0(x, pos);
  for (const auto& blk : blocks_) x = blk(x, /*causal=*/true);
  Var pooled = gather_rows(ln_final_(x), eot);  // [B, width]
  return proj_(pooled);                         // [B, s]
}

// ---------------- prompt refiner ----------------

void PromptRefiner::init(ParamStore& ps, int e, int shared_dim, int heads,
                         Rng& rng) {
  if (e < 1) throw ConfigError("prompt refiner depth e must be >= 1");
  blocks_.resize((size_t)e);
  for (int i = 0; i < e; ++i)
    blocks_[(size_t)i].init(ps, "refiner.block" + std::to_string(i), shared_dim,
                            heads, rng);
}

Var PromptRefiner::refine(const Var& embedding) const {
  int C = embedding->shape[0], s = embedding->shape[1];
  Var x = reshape(embedding, {1, C, s});
  for (const auto& blk : blocks_) x = blk(x, /*causal=*/false);
  return reshape(x, {C, s});
}

}  // namespace specfuse
