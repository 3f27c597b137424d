#include "vixen/tokenizer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "vixen/error.hpp"

namespace vixen {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

std::string mark_space(std::string_view piece) {
  if (!piece.empty() && piece.front() == ' ') {
    return std::string(Tokenizer::kSpaceMark) + std::string(piece.substr(1));
  }
  return std::string(piece);
}

std::string unmark_space(const std::string& token) {
  if (token.rfind(Tokenizer::kSpaceMark, 0) == 0) return " " + token.substr(Tokenizer::kSpaceMark.size());
  return token;
}

// Raw pieces, spaces unmarked.
std::vector<std::string_view> raw_pieces(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t start = i;
    if (text[i] == ' ' && i + 1 < text.size() && !is_space(text[i + 1])) {
      ++i;
    } else if (is_space(text[i])) {
      out.push_back(text.substr(i, 1));
      ++i;
      continue;
    }
    while (i < text.size() && !is_space(text[i])) ++i;
    out.push_back(text.substr(start, i - start));
  }
  return out;
}

// A literal U+2581 at the start of a piece would decode as a space.
bool ambiguous(std::string_view raw) { return raw.rfind(Tokenizer::kSpaceMark, 0) == 0; }

}  // namespace

std::string byte_token_name(unsigned char b) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "<0x%02X>", b);
  return buf;
}

Tokenizer::Tokenizer(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  std::fill(std::begin(byte_ids_), std::end(byte_ids_), -1);
  byte_of_id_.assign(tokens_.size(), -1);
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const auto id = static_cast<TokenId>(i);
    if (!index_.emplace(tokens_[i], id).second) {
      throw TokenError("duplicate vocabulary entry '" + tokens_[i] + "'");
    }
  }
  auto find = [&](std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw TokenError("vocabulary lacks special token " + std::string(name));
    return it->second;
  };
  bos_ = find(kBos);
  eos_ = find(kEos);
  pad_ = find(kPad);

  std::size_t bytes_found = 0;
  for (int b = 0; b < 256; ++b) {
    auto it = index_.find(byte_token_name(static_cast<unsigned char>(b)));
    if (it != index_.end()) {
      byte_ids_[b] = it->second;
      byte_of_id_[static_cast<std::size_t>(it->second)] = b;
      ++bytes_found;
    }
  }
  if (bytes_found != 0 && bytes_found != 256) {
    throw TokenError("vocabulary has a partial byte table (" + std::to_string(bytes_found) + "/256)");
  }
}

Tokenizer::Tokenizer() : Tokenizer(with_pieces({})) {}

Tokenizer Tokenizer::with_pieces(const std::vector<std::string>& pieces) {
  std::vector<std::string> tokens = {std::string(kPad), std::string(kBos), std::string(kEos)};
  for (int b = 0; b < 256; ++b) tokens.push_back(byte_token_name(static_cast<unsigned char>(b)));
  std::unordered_map<std::string, bool> seen;
  for (const auto& t : tokens) seen[t] = true;
  for (const auto& p : pieces) {
    if (p.empty() || seen.count(p)) continue;
    seen[p] = true;
    tokens.push_back(p);
  }
  return Tokenizer(std::move(tokens));
}

Tokenizer Tokenizer::from_corpus(const std::vector<std::string>& texts, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts)
    for (auto raw : raw_pieces(t))
      if ((raw.size() > 1 || !is_space(raw[0])) && !ambiguous(raw)) ++counts[mark_space(raw)];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> pieces;
  for (auto& [piece, n] : ranked)
    if (n >= min_count) pieces.push_back(piece);
  return with_pieces(pieces);
}

std::vector<std::string> Tokenizer::split_pieces(std::string_view text) {
  std::vector<std::string> out;
  for (auto raw : raw_pieces(text)) out.push_back(mark_space(raw));
  return out;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (auto raw : raw_pieces(text)) {
    const std::string piece = mark_space(raw);
    auto it = index_.find(piece);
    if (it != index_.end() && !is_special(it->second) &&
        byte_of_id_[static_cast<std::size_t>(it->second)] < 0 && !ambiguous(raw)) {
      ids.push_back(it->second);
      continue;
    }
    if (!has_byte_fallback()) throw TokenError("unknown token '" + piece + "' and no byte fallback");
    for (unsigned char c : raw) ids.push_back(byte_ids_[c]);
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw TokenError("token id " + std::to_string(id) + " out of range [0, " +
                       std::to_string(tokens_.size()) + ")");
    }
    if (is_special(id)) continue;
    const int b = byte_of_id_[static_cast<std::size_t>(id)];
    if (b >= 0) {
      out.push_back(static_cast<char>(b));
    } else {
      out += unmark_space(tokens_[static_cast<std::size_t>(id)]);
    }
  }
  return out;
}

const std::string& Tokenizer::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw TokenError("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TokenError("cannot write vocabulary " + path.string());
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TokenError("cannot read vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) {
      throw TokenError(path.string() + ":" + std::to_string(lineno) + ": expected token<TAB>id");
    }
    std::size_t id = 0;
    try {
      id = std::stoul(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw TokenError(path.string() + ":" + std::to_string(lineno) + ": bad id");
    }
    if (id != tokens.size()) {
      throw TokenError(path.string() + ":" + std::to_string(lineno) + ": ids must be contiguous from 0");
    }
    tokens.push_back(line.substr(0, tab));
  }
  return Tokenizer(std::move(tokens));
}

}  // namespace vixen
