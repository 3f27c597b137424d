#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace vixen {

using TokenId = int;

// Whitespace-piece tokenizer with byte-level fallback.
//
// Text is cut into pieces: a single optional leading space joined to the
// following run of non-space characters (the space is spelled U+2581 in the
// vocabulary), or any other whitespace character on its own. A piece found in
// the vocabulary maps to one id; anything else is spelled as <0xNN> byte
// tokens. With byte tokens present, decode(encode(t)) == t for every string.
class Tokenizer {
 public:
  static constexpr std::string_view kBos = "<bos>";
  static constexpr std::string_view kEos = "<eos>";
  static constexpr std::string_view kPad = "<pad>";
  static constexpr std::string_view kSpaceMark = "\xE2\x96\x81";  // U+2581

  /// Specials and byte tokens only.
  Tokenizer();

  /// Specials, then the 256 byte tokens, then `pieces` in order (duplicates dropped).
  static Tokenizer with_pieces(const std::vector<std::string>& pieces);
  /// Vocabulary from every piece occurring at least `min_count` times, sorted by
  /// descending count then lexicographically.
  static Tokenizer from_corpus(const std::vector<std::string>& texts, std::size_t min_count = 1);

  /// "token<TAB>id" per line. Specials are required; byte tokens are optional.
  static Tokenizer load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Throws TokenError for an unknown piece when byte fallback is absent.
  std::vector<TokenId> encode(std::string_view text) const;
  /// Special tokens render as nothing.
  std::string decode(std::span<const TokenId> ids) const;

  /// Raw pieces as cut by the splitter, with the leading space mark applied.
  static std::vector<std::string> split_pieces(std::string_view text);

  std::size_t size() const noexcept { return tokens_.size(); }
  TokenId bos() const noexcept { return bos_; }
  TokenId eos() const noexcept { return eos_; }
  TokenId pad() const noexcept { return pad_; }
  bool has_byte_fallback() const noexcept { return byte_ids_[0] >= 0; }
  bool is_special(TokenId id) const noexcept { return id == bos_ || id == eos_ || id == pad_; }
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  explicit Tokenizer(std::vector<std::string> tokens);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId bos_ = -1;
  TokenId eos_ = -1;
  TokenId pad_ = -1;
  TokenId byte_ids_[256];
  std::vector<int> byte_of_id_;  // -1 when the id is not a byte token
};

std::string byte_token_name(unsigned char b);

}  // namespace vixen
