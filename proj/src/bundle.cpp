#include "vixen/bundle.hpp"

#include <json.hpp>

#include <fstream>
#include <set>

#include "vixen/adapters.hpp"
#include "vixen/binary_io.hpp"
#include "vixen/error.hpp"
#include "vixen/transformer.hpp"

namespace vixen {

using json = nlohmann::ordered_json;

std::uint64_t ModelBundle::frozen_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint64_t part : {encoder ? encoder->parameter_checksum() : 0, lm ? lm->parameter_checksum() : 0}) {
    h ^= part;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void ModelBundle::check() const {
  std::vector<std::string> problems;
  if (!encoder) problems.emplace_back("bundle has no encoder");
  if (!lm) problems.emplace_back("bundle has no language model");
  if (encoder && projection.in_width() != encoder->describe().h) {
    problems.push_back("projection input width " + std::to_string(projection.in_width()) +
                       " != encoder h " + std::to_string(encoder->describe().h));
  }
  if (lm && projection.out_width() != lm->embed_width()) {
    problems.push_back("projection output width " + std::to_string(projection.out_width()) +
                       " != LM width " + std::to_string(lm->embed_width()));
  }
  if (lm && tokenizer.size() != lm->vocab_size()) {
    problems.push_back("tokenizer has " + std::to_string(tokenizer.size()) + " tokens, LM vocabulary is " +
                       std::to_string(lm->vocab_size()));
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
}

SoftPrompt build_prompt(const ModelBundle& bundle, const FeatureMap& first, const FeatureMap& second) {
  const SoftPrompt visual = fuse(project(first, bundle.projection), project(second, bundle.projection), bundle.fusion);
  return assemble_prompt(visual, bundle.prefix, bundle.tokenizer, bundle.lm->embedding_table());
}

std::vector<TokenId> target_ids(const ModelBundle& bundle, std::string_view text) {
  auto ids = bundle.tokenizer.encode(text);
  ids.push_back(bundle.tokenizer.eos());
  return ids;
}

Generation caption_pair(const ModelBundle& bundle, const Image& first, const Image& second,
                        const GenerateOptions& options) {
  const SoftPrompt prompt = build_prompt(bundle, bundle.encoder->encode(first), bundle.encoder->encode(second));
  return generate(*bundle.lm, prompt, bundle.tokenizer, options);
}

ModelBundle make_toy_bundle(const std::vector<std::string>& corpus, std::size_t image_size,
                            const ToyBundleOptions& options) {
  if (corpus.empty()) throw ConfigError({"make_toy_bundle: empty corpus"});
  ModelBundle bundle;
  bundle.fusion = options.fusion;
  bundle.prefix = std::string(prefix_text(options.prefix_profile));

  std::vector<std::string> texts = corpus;
  texts.push_back(bundle.prefix);
  bundle.tokenizer = Tokenizer::from_corpus(texts);

  EncoderConfig enc;
  enc.patch_size = options.patch_size;
  enc.h = options.feature_width;
  enc.seed = options.seed;
  auto encoder = std::make_shared<ToyPatchEncoder>(enc);
  const std::size_t k = encoder->describe().k_for(image_size, image_size);
  bundle.encoder = encoder;

  TransformerConfig lm_cfg;
  lm_cfg.vocab = bundle.tokenizer.size();
  lm_cfg.width = options.lm_width;
  lm_cfg.layers = options.lm_layers;
  lm_cfg.heads = options.lm_heads;
  lm_cfg.max_positions = options.max_positions;
  lm_cfg.seed = options.seed + 1;
  auto lm = std::make_shared<TinyTransformer>(lm_cfg);

  if (options.pretrain_steps > 0) {
    const auto context = bundle.tokenizer.encode(bundle.prefix);
    std::vector<PromptedExample> examples;
    std::set<std::string> seen;
    for (const auto& text : corpus) {
      if (!seen.insert(text).second) continue;
      PromptedExample ex;
      ex.prompt_rows = fused_length(k, options.fusion);
      ex.context = context;
      ex.target = bundle.tokenizer.encode(text);
      ex.target.push_back(bundle.tokenizer.eos());
      examples.push_back(std::move(ex));
    }
    PretrainOptions pre;
    pre.steps = options.pretrain_steps;
    pre.lr = options.pretrain_lr;
    pre.seed = options.seed + 2;
    pretrain_prompted_lm(*lm, examples, pre);
  }
  bundle.lm = lm;

  Rng rng(options.seed + 3);
  bundle.projection = ProjectionLayer::initialized(enc.h, lm_cfg.width, rng);
  bundle.check();
  return bundle;
}

void save_bundle(const std::filesystem::path& dir, const ModelBundle& bundle) {
  bundle.check();
  std::filesystem::create_directories(dir);
  json doc;
  doc["format"] = "vixen-bundle";
  doc["version"] = 1;
  if (const auto* toy = dynamic_cast<const ToyPatchEncoder*>(bundle.encoder.get())) {
    const auto& c = toy->config();
    doc["encoder"] = {{"kind", "toy-patch"},
                      {"patch_size", c.patch_size},
                      {"h", c.h},
                      {"seed", c.seed},
                      {"zero_bias", c.zero_bias}};
  } else {
    doc["encoder"] = {{"kind", "adapter"}, {"name", bundle.encoder->name()}};
  }
  if (const auto* tiny = dynamic_cast<const TinyTransformer*>(bundle.lm.get())) {
    save_transformer(dir / "lm.vxlm", *tiny);
    doc["lm"] = {{"kind", "tiny-transformer"}, {"file", "lm.vxlm"}};
  } else {
    doc["lm"] = {{"kind", "adapter"}, {"name", bundle.lm->name()}};
  }
  doc["fusion"] = std::string(to_string(bundle.fusion));
  doc["prefix"] = bundle.prefix;
  doc["vocab"] = "vocab.txt";
  doc["projection"] = "projection.vxpj";
  doc["frozen_checksum"] = bundle.frozen_checksum();
  bundle.tokenizer.save(dir / "vocab.txt");
  save_projection(dir / "projection.vxpj", bundle.projection);
  write_file_atomic(dir / "bundle.json", doc.dump(2) + "\n");
}

ModelBundle load_bundle(const std::filesystem::path& dir) {
  json doc;
  try {
    doc = json::parse(read_file(dir / "bundle.json"));
  } catch (const json::exception& e) {
    throw ConfigError({"bundle " + dir.string() + ": " + e.what()});
  }
  if (doc.value("format", "") != "vixen-bundle" || doc.value("version", 0) != 1) {
    throw ConfigError({"bundle " + dir.string() + ": not a version 1 vixen bundle"});
  }
  ModelBundle bundle;
  try {
    const auto& enc = doc.at("encoder");
    if (enc.at("kind") == "toy-patch") {
      EncoderConfig c;
      c.patch_size = enc.at("patch_size").get<std::size_t>();
      c.h = enc.at("h").get<std::size_t>();
      c.seed = enc.at("seed").get<std::uint64_t>();
      c.zero_bias = enc.at("zero_bias").get<bool>();
      bundle.encoder = std::make_shared<ToyPatchEncoder>(c);
    } else {
      bundle.encoder = adapter_registry().make_encoder(enc.at("name").get<std::string>());
    }
    const auto& lm = doc.at("lm");
    if (lm.at("kind") == "tiny-transformer") {
      bundle.lm = std::make_shared<TinyTransformer>(load_transformer(dir / lm.at("file").get<std::string>()));
    } else {
      bundle.lm = adapter_registry().make_language_model(lm.at("name").get<std::string>());
    }
    bundle.fusion = parse_fusion(doc.at("fusion").get<std::string>());
    bundle.prefix = doc.at("prefix").get<std::string>();
    bundle.tokenizer = Tokenizer::load(dir / doc.at("vocab").get<std::string>());
    bundle.projection = load_projection(dir / doc.at("projection").get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError({"bundle " + dir.string() + ": " + e.what()});
  }
  bundle.check();
  return bundle;
}

}  // namespace vixen
