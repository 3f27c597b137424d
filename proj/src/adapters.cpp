#include "vixen/adapters.hpp"

#include "vixen/embedding.hpp"
#include "vixen/error.hpp"

namespace vixen {

const std::vector<AdapterProfile>& builtin_profiles() {
  static const std::vector<AdapterProfile> profiles = [] {
    std::vector<AdapterProfile> p;
    AdapterProfile clip;
    clip.name = "clip-rn50x16";
    clip.kind = AdapterKind::Encoder;
    clip.k = 144;
    clip.h = 3072;
    clip.provenance = "CLIP RN50x16 visual trunk, 12x12x3072 map before attention pooling, flattened";
    p.push_back(clip);

    AdapterProfile qformer;
    qformer.name = "vit-g-qformer";
    qformer.kind = AdapterKind::Encoder;
    qformer.k = 257;
    qformer.provenance = "ViT-g followed by a Q-Former; feature width declared by the adapter";
    p.push_back(qformer);

    AdapterProfile mpnet;
    mpnet.name = "mpnet";
    mpnet.kind = AdapterKind::Embedder;
    mpnet.d = 768;
    mpnet.provenance = "MPNet sentence transformer, normalized 768-d embeddings";
    p.push_back(mpnet);

    AdapterProfile gptj;
    gptj.name = "gpt-j";
    gptj.kind = AdapterKind::LanguageModel;
    gptj.e = 4096;
    gptj.provenance = "GPT-J 6B, input embedding width 4096";
    p.push_back(gptj);
    return p;
  }();
  return profiles;
}

std::string ShapeReport::text() const {
  return adapter + ": " + std::to_string(rows) + "x" + std::to_string(cols);
}

AdapterRegistry::AdapterRegistry() {
  for (const auto& p : builtin_profiles()) entries_[p.name] = Entry{p, {}, {}, {}};
}

void AdapterRegistry::add(AdapterProfile profile, Entry entry) {
  std::vector<std::string> problems;
  if (profile.name.empty()) problems.emplace_back("adapter profile needs a name");
  auto it = entries_.find(profile.name);
  if (it != entries_.end()) {
    const Entry& old = it->second;
    if (old.encoder || old.embedder || old.lm) {
      problems.push_back("adapter '" + profile.name + "' is already registered");
    }
    if (old.profile.kind != profile.kind) problems.push_back("adapter '" + profile.name + "' changes kind");
    // Shapes fixed by the built-in profile cannot be redeclared differently.
    auto keep = [&](const std::optional<std::size_t>& fixed, std::optional<std::size_t>& given, const char* what) {
      if (!fixed) return;
      if (given && *given != *fixed) {
        problems.push_back("adapter '" + profile.name + "' declares " + what + "=" + std::to_string(*given) +
                           " but the profile fixes " + std::to_string(*fixed));
      }
      given = fixed;
    };
    keep(old.profile.k, profile.k, "k");
    keep(old.profile.h, profile.h, "h");
    keep(old.profile.d, profile.d, "d");
    keep(old.profile.vocab, profile.vocab, "V");
    keep(old.profile.e, profile.e, "e");
    if (profile.provenance.empty()) profile.provenance = old.profile.provenance;
  }
  switch (profile.kind) {
    case AdapterKind::Encoder:
      if (!profile.k || !profile.h) problems.push_back("encoder adapter '" + profile.name + "' must declare k and h");
      break;
    case AdapterKind::Embedder:
      if (!profile.d) problems.push_back("embedder adapter '" + profile.name + "' must declare d");
      break;
    case AdapterKind::LanguageModel:
      if (!profile.e) problems.push_back("language-model adapter '" + profile.name + "' must declare e");
      break;
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
  entry.profile = profile;
  entries_[profile.name] = std::move(entry);
}

void AdapterRegistry::register_encoder(AdapterProfile profile, EncoderFn fn) {
  profile.kind = AdapterKind::Encoder;
  if (!fn) throw ConfigError({"adapter '" + profile.name + "': empty encoder callable"});
  add(std::move(profile), Entry{{}, std::move(fn), {}, {}});
}

void AdapterRegistry::register_embedder(AdapterProfile profile, EmbedderFn fn) {
  profile.kind = AdapterKind::Embedder;
  if (!fn) throw ConfigError({"adapter '" + profile.name + "': empty embedder callable"});
  add(std::move(profile), Entry{{}, {}, std::move(fn), {}});
}

void AdapterRegistry::register_language_model(AdapterProfile profile, LanguageModelFactory factory) {
  profile.kind = AdapterKind::LanguageModel;
  if (!factory) throw ConfigError({"adapter '" + profile.name + "': empty language-model factory"});
  add(std::move(profile), Entry{{}, {}, {}, std::move(factory)});
}

bool AdapterRegistry::has(const std::string& name) const { return entries_.count(name) != 0; }

bool AdapterRegistry::implemented(const std::string& name) const {
  auto it = entries_.find(name);
  return it != entries_.end() && (it->second.encoder || it->second.embedder || it->second.lm);
}

const AdapterRegistry::Entry& AdapterRegistry::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw AdapterError(name, "no such adapter profile");
  return it->second;
}

const AdapterProfile& AdapterRegistry::profile(const std::string& name) const { return entry(name).profile; }

std::vector<std::string> AdapterRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

std::shared_ptr<const ImageEncoder> AdapterRegistry::make_encoder(const std::string& name) const {
  const Entry& e = entry(name);
  if (e.profile.kind != AdapterKind::Encoder) throw AdapterError(name, "not an encoder profile");
  if (!e.encoder) throw AdapterError(name, "profile is declared but no implementation is registered");
  return std::make_shared<AdapterEncoder>(name, *e.profile.k, *e.profile.h, e.encoder);
}

std::shared_ptr<const SentenceEmbedder> AdapterRegistry::make_embedder(const std::string& name) const {
  const Entry& e = entry(name);
  if (e.profile.kind != AdapterKind::Embedder) throw AdapterError(name, "not an embedder profile");
  if (!e.embedder) throw AdapterError(name, "profile is declared but no implementation is registered");
  return std::make_shared<AdapterEmbedder>(name, *e.profile.d, e.embedder);
}

std::shared_ptr<const LanguageModel> AdapterRegistry::make_language_model(const std::string& name) const {
  const Entry& e = entry(name);
  if (e.profile.kind != AdapterKind::LanguageModel) throw AdapterError(name, "not a language-model profile");
  if (!e.lm) throw AdapterError(name, "profile is declared but no implementation is registered");
  std::shared_ptr<const LanguageModel> lm;
  try {
    lm = e.lm();
  } catch (const AdapterError&) {
    throw;
  } catch (const std::exception& ex) {
    throw AdapterError(name, ex.what());
  }
  if (!lm) throw AdapterError(name, "factory returned no model");
  if (lm->embed_width() != *e.profile.e) {
    throw AdapterError(name, "declared e=" + std::to_string(*e.profile.e) + " but the model has width " +
                                 std::to_string(lm->embed_width()));
  }
  if (e.profile.vocab && lm->vocab_size() != *e.profile.vocab) {
    throw AdapterError(name, "declared V=" + std::to_string(*e.profile.vocab) + " but the model has " +
                                 std::to_string(lm->vocab_size()));
  }
  return lm;
}

AdapterRegistry& adapter_registry() {
  static AdapterRegistry registry;
  return registry;
}

ShapeReport probe(const ImageEncoder& encoder, const Image& sample) {
  const EncoderContract c = encoder.describe();
  const std::size_t k = c.k_for(sample.height, sample.width);
  const FeatureMap f = encoder.encode(sample);
  if (f.rows() != k || f.cols() != c.h) {
    throw AdapterError(encoder.name(), "declared " + std::to_string(k) + "x" + std::to_string(c.h) + ", observed " +
                                           shape_string(f));
  }
  return ShapeReport{encoder.name(), f.rows(), f.cols()};
}

ShapeReport probe(const AdapterRegistry& registry, const std::string& name, const Image& sample) {
  if (name == "toy-patch" && !registry.has(name)) {
    EncoderConfig cfg;
    return probe(ToyPatchEncoder(cfg), sample);
  }
  const auto& p = registry.profile(name);
  switch (p.kind) {
    case AdapterKind::Encoder:
      return probe(*registry.make_encoder(name), sample);
    case AdapterKind::Embedder: {
      auto emb = registry.make_embedder(name);
      const auto v = emb->embed("probe");
      return ShapeReport{name, 1, v.size()};
    }
    case AdapterKind::LanguageModel: {
      auto lm = registry.make_language_model(name);
      return ShapeReport{name, lm->vocab_size(), lm->embed_width()};
    }
  }
  throw AdapterError(name, "unknown adapter kind");
}

}  // namespace vixen
