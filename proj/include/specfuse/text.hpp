#pragma once

// Prompt manifests, lowercase byte-level BPE, the small causal text
// transformer and the class-axis prompt refinement stack.

#include "specfuse/errors.hpp"
#include "specfuse/nn.hpp"

#include <array>
#include <string>
#include <vector>

namespace specfuse {

constexpr int kMaxTokens = 77;
constexpr int kPadId = 0;
constexpr int kSotId = 1;
constexpr int kEotId = 2;
constexpr int kByteBase = 3;  // byte tokens occupy ids 3..258

inline std::string self_categorical_template(const std::string& class_name);

struct PromptClass {
  std::string name;
  std::string self_categorical;               // T_c
  std::array<std::string, 3> differentiated;  // T_d1..T_d3
};

struct PromptManifest {
  std::vector<PromptClass> classes;
  std::vector<std::string> corpus() const;  // all 4C prompt strings
};

PromptManifest load_manifest(const std::string& path);
void save_manifest(const PromptManifest& m, const std::string& path);
// Validation shared by load and programmatic construction.
void validate_manifest(const PromptManifest& m);

// ---------------- BPE ----------------

struct BPEVocab {
  // merge list in learned rank order; token ids: reserved, 256 bytes, merges
  std::vector<std::pair<int, int>> merges;                // pairs of token ids
  int vocab_size() const { return kByteBase + 256 + (int)merges.size(); }
  std::string token_bytes(int id) const;                  // byte expansion
  void save(const std::string& path) const;               // merges file
  static BPEVocab load(const std::string& path);
};

BPEVocab build_vocab(const std::vector<std::string>& corpus, int target_size);

struct TokenSequence {
  std::array<int, kMaxTokens> ids{};
  int valid_len = 0;
};

TokenSequence tokenize(const std::string& text, const BPEVocab& vocab);
std::string detokenize(const TokenSequence& seq, const BPEVocab& vocab);

// ---------------- text transformer ----------------

struct TextEncoderConfig {
  int width = 512;
  int layers = 3;
  int heads = 8;
  int shared_dim = 512;  // s
};

class TextEncoder {
 public:
  void init(ParamStore& ps, const TextEncoderConfig& cfg, int vocab_size,
            Rng& rng);
  // EOT-position embedding, layer-normalized and projected to shared_dim.
  // Only the first max(valid_len) positions are evaluated; with the causal
  // mask this is exact.
  Var encode(const std::vector<TokenSequence>& batch) const;

 private:
  TextEncoderConfig cfg_;
  Var token_emb_, pos_emb_;
  std::vector<TransformerBlock> blocks_;
  LayerNormLayer ln_final_;
  Linear proj_;
};

// e cascaded transformer blocks over the class axis; the same weights serve
// all four prompt branches.
class PromptRefiner {
 public:
  void init(ParamStore& ps, int e, int shared_dim, int heads, Rng& rng);
  Var refine(const Var& embedding) const;  // [C, s] -> [C, s]
  int depth() const { return (int)blocks_.size(); }

 private:
  std::vector<TransformerBlock> blocks_;
};

inline std::string to_lower(std::string s) {
  for (char& c : s)
    if (c >= 'A' && c <= 'Z') c += 32;
  return s;
}

inline std::string self_categorical_template(const std::string& class_name) {
  return to_lower("a hyperspectral and lidar multimodal data of " + class_name);
}

}  // namespace specfuse
