#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vixen/encoder.hpp"
#include "vixen/language_model.hpp"

namespace vixen {

class SentenceEmbedder;

enum class AdapterKind { Encoder, Embedder, LanguageModel };

// Declared shapes for a pretrained component. Encoders declare (k, h),
// embedders d, language models (V, e). Unset fields are declared by whoever
// registers the implementation.
struct AdapterProfile {
  std::string name;
  AdapterKind kind = AdapterKind::Encoder;
  std::optional<std::size_t> k, h;
  std::optional<std::size_t> d;
  std::optional<std::size_t> vocab, e;
  std::string provenance;
};

/// Built-in profiles for the paper-scale backbones. None ships an implementation.
const std::vector<AdapterProfile>& builtin_profiles();

struct ShapeReport {
  std::string adapter;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::string text() const;  // e.g. "clip-rn50x16: 144x3072"
};

// Name-keyed registry of adapter implementations. Encoders are wrapped in
// AdapterEncoder so declared shapes are asserted on every call.
class AdapterRegistry {
 public:
  using EncoderFn = AdapterEncoder::Fn;
  using EmbedderFn = std::function<std::vector<double>(const std::string&)>;
  using LanguageModelFactory = std::function<std::shared_ptr<const LanguageModel>()>;

  /// Starts with the built-in profiles declared but unimplemented.
  AdapterRegistry();

  /// Adds or completes a profile. Throws ConfigError if an implementation
  /// is already registered under that name or required shapes are missing.
  void register_encoder(AdapterProfile profile, EncoderFn fn);
  void register_embedder(AdapterProfile profile, EmbedderFn fn);
  void register_language_model(AdapterProfile profile, LanguageModelFactory factory);

  bool has(const std::string& name) const;
  bool implemented(const std::string& name) const;
  const AdapterProfile& profile(const std::string& name) const;
  std::vector<std::string> names() const;

  std::shared_ptr<const ImageEncoder> make_encoder(const std::string& name) const;
  std::shared_ptr<const SentenceEmbedder> make_embedder(const std::string& name) const;
  std::shared_ptr<const LanguageModel> make_language_model(const std::string& name) const;

 private:
  struct Entry {
    AdapterProfile profile;
    EncoderFn encoder;
    EmbedderFn embedder;
    LanguageModelFactory lm;
  };
  const Entry& entry(const std::string& name) const;
  void add(AdapterProfile profile, Entry entry);

  std::map<std::string, Entry> entries_;
};

/// Process-wide registry used by the CLI and bundle loading.
AdapterRegistry& adapter_registry();

/// Runs one encode through `encoder` and asserts its contract on `sample`.
ShapeReport probe(const ImageEncoder& encoder, const Image& sample);
/// Looks the adapter up by name first; "toy-patch" probes a default toy encoder.
ShapeReport probe(const AdapterRegistry& registry, const std::string& name, const Image& sample);

}  // namespace vixen
