#include "clickseg/clip_tokenizer.hpp"

#include <algorithm>
#include <climits>
#include <optional>
#include <sstream>

#include <zlib.h>

#include "clickseg/error.hpp"

namespace clickseg {

namespace {

std::string utf8(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
  return out;
}

std::vector<char32_t> decode_utf8(std::string_view s) {
  std::vector<char32_t> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    int len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
    if (len == 0 || i + static_cast<std::size_t>(len) > s.size())
      throw Error(ErrorCode::invalid_argument, "text is not valid UTF-8");
    char32_t cp = len == 1 ? c : c & (0x7F >> len);
    for (int k = 1; k < len; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]) & 0x3F);
    out.push_back(cp);
    i += static_cast<std::size_t>(len);
  }
  return out;
}

std::string read_gzip(const std::filesystem::path& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw Error(ErrorCode::not_found, "cannot open tokenizer vocabulary " + path.string());
  std::string out;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw Error(ErrorCode::io_error, "corrupt tokenizer vocabulary " + path.string());
  return out;
}

bool is_space(char32_t c) { return c == ' ' || (c >= '\t' && c <= '\r') || c == 0x85 || c == 0xA0 || c == 0x3000 || (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F || c == 0x1680; }

bool is_number(char32_t c) {
  return (c >= '0' && c <= '9') || c == 0xB2 || c == 0xB3 || c == 0xB9 || (c >= 0xBC && c <= 0xBE) ||
         (c >= 0x660 && c <= 0x669) || (c >= 0x2070 && c <= 0x2079) || (c >= 0x2080 && c <= 0x2089) ||
         (c >= 0x2150 && c <= 0x2189) || (c >= 0x2460 && c <= 0x249B) || (c >= 0xFF10 && c <= 0xFF19);
}

// ASCII exactly; beyond ASCII, symbol and punctuation blocks are excluded and
// everything else counts as a letter.
bool is_letter(char32_t c) {
  if (c < 0x80) return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
  if (is_space(c) || is_number(c)) return false;
  if (c < 0xC0) return c == 0xAA || c == 0xB5 || c == 0xBA;
  if (c == 0xD7 || c == 0xF7) return false;
  if (c >= 0x2000 && c <= 0x2BFF) return false;
  if (c >= 0x3000 && c <= 0x303F) return false;
  if (c >= 0xFE30 && c <= 0xFE4F) return false;
  if (c >= 0xFF00 && c <= 0xFF20) return false;
  if (c >= 0x1F000 && c <= 0x1FAFF) return false;
  return true;
}

char32_t to_lower(char32_t c) {
  if (c >= 'A' && c <= 'Z') return c + 32;
  if ((c >= 0xC0 && c <= 0xDE && c != 0xD7)) return c + 32;
  if (c >= 0x391 && c <= 0x3A9 && c != 0x3A2) return c + 32;
  if (c >= 0x410 && c <= 0x42F) return c + 32;
  return c;
}

std::string html_unescape(std::string_view s) {
  static const std::pair<std::string_view, char32_t> named[] = {
      {"amp", '&'}, {"lt", '<'}, {"gt", '>'}, {"quot", '"'}, {"apos", '\''}, {"nbsp", 0xA0}};
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '&') {
      out += s[i];
      continue;
    }
    const auto semi = s.find(';', i);
    if (semi == std::string_view::npos || semi - i > 10) {
      out += s[i];
      continue;
    }
    const auto name = s.substr(i + 1, semi - i - 1);
    std::optional<char32_t> cp;
    if (name.size() > 1 && name[0] == '#') {
      try {
        const bool hex = name[1] == 'x' || name[1] == 'X';
        cp = static_cast<char32_t>(std::stoul(std::string(name.substr(hex ? 2 : 1)), nullptr, hex ? 16 : 10));
      } catch (const std::exception&) {
      }
    } else {
      for (const auto& [k, v] : named)
        if (name == k) cp = v;
    }
    if (!cp) {
      out += s[i];
      continue;
    }
    out += utf8(*cp);
    i = semi;
  }
  return out;
}

// Unescape, collapse whitespace, lower-case.
std::vector<char32_t> clean(std::string_view text) {
  const auto cps = decode_utf8(html_unescape(html_unescape(text)));
  std::vector<char32_t> out;
  for (char32_t c : cps) {
    if (is_space(c)) {
      if (!out.empty() && out.back() != ' ') out.push_back(' ');
    } else {
      out.push_back(to_lower(c));
    }
  }
  if (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

// The CLIP pre-tokenizer: contractions, letter runs, single digits, runs of
// other non-space characters.
std::vector<std::string> pre_tokenize(const std::vector<char32_t>& t) {
  std::vector<std::string> out;
  auto substr = [&](std::size_t a, std::size_t b) {
    std::string s;
    for (std::size_t k = a; k < b; ++k) s += utf8(t[k]);
    return s;
  };
  for (std::size_t i = 0; i < t.size();) {
    if (is_space(t[i])) {
      ++i;
      continue;
    }
    if (t[i] == '\'') {
      static const std::u32string_view contractions[] = {U"s", U"t", U"re", U"ve", U"m", U"ll", U"d"};
      std::size_t n = 0;
      for (const auto c : contractions)
        if (i + 1 + c.size() <= t.size() && std::equal(c.begin(), c.end(), t.begin() + static_cast<std::ptrdiff_t>(i + 1))) {
          n = c.size();
          break;
        }
      if (n > 0) {
        out.push_back(substr(i, i + 1 + n));
        i += 1 + n;
        continue;
      }
    }
    std::size_t j = i + 1;
    if (is_letter(t[i])) {
      while (j < t.size() && is_letter(t[j])) ++j;
    } else if (!is_number(t[i])) {
      while (j < t.size() && !is_space(t[j]) && !is_letter(t[j]) && !is_number(t[j])) ++j;
    }
    out.push_back(substr(i, j));
    i = j;
  }
  return out;
}

}  // namespace

ClipTokenizer::ClipTokenizer(const std::filesystem::path& bpe_path) {
  std::vector<int> bs;
  for (int b = '!'; b <= '~'; ++b) bs.push_back(b);
  for (int b = 0xA1; b <= 0xAC; ++b) bs.push_back(b);
  for (int b = 0xAE; b <= 0xFF; ++b) bs.push_back(b);
  std::vector<char32_t> cs(bs.begin(), bs.end());
  for (int b = 0, n = 0; b < 256; ++b)
    if (std::find(bs.begin(), bs.end(), b) == bs.end()) {
      bs.push_back(b);
      cs.push_back(static_cast<char32_t>(256 + n++));
    }
  for (std::size_t k = 0; k < bs.size(); ++k) {
    byte_encoder_[bs[k]] = utf8(cs[k]);
    byte_decoder_[utf8(cs[k])] = static_cast<std::uint8_t>(bs[k]);
  }

  std::istringstream lines(read_gzip(bpe_path));
  std::string line;
  std::getline(lines, line);
  std::vector<std::pair<std::string, std::string>> merges;
  while (merges.size() < 49152 - 256 - 2 && std::getline(lines, line)) {
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw Error(ErrorCode::parse_error, "bad merge line in " + bpe_path.string());
    merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  for (std::size_t k = 0; k < bs.size(); ++k) decoder_.push_back(utf8(cs[k]));
  for (std::size_t k = 0; k < bs.size(); ++k) decoder_.push_back(utf8(cs[k]) + "</w>");
  for (std::size_t k = 0; k < merges.size(); ++k) {
    decoder_.push_back(merges[k].first + merges[k].second);
    ranks_.emplace(merges[k], static_cast<int>(k));
  }
  decoder_.push_back("<start_of_text>");
  decoder_.push_back("<end_of_text>");
  for (std::size_t k = 0; k < decoder_.size(); ++k) encoder_.emplace(decoder_[k], static_cast<int>(k));
  start_ = encoder_.at("<start_of_text>");
  end_ = encoder_.at("<end_of_text>");
}

std::string ClipTokenizer::bpe(const std::string& token) const {
  {
    std::lock_guard lock(cache_mutex_);
    if (auto it = cache_.find(token); it != cache_.end()) return it->second;
  }
  // Split into byte-encoder symbols (each one UTF-8 code point).
  std::vector<std::string> word;
  for (const char32_t cp : decode_utf8(token)) word.push_back(utf8(cp));
  word.back() += "</w>";
  while (word.size() > 1) {
    int best = INT_MAX;
    std::size_t at = 0;
    for (std::size_t k = 0; k + 1 < word.size(); ++k) {
      auto it = ranks_.find({word[k], word[k + 1]});
      if (it != ranks_.end() && it->second < best) {
        best = it->second;
        at = k;
      }
    }
    if (best == INT_MAX) break;
    const std::string first = word[at], second = word[at + 1];
    std::vector<std::string> merged;
    for (std::size_t k = 0; k < word.size();) {
      if (k + 1 < word.size() && word[k] == first && word[k + 1] == second) {
        merged.push_back(first + second);
        k += 2;
      } else {
        merged.push_back(word[k++]);
      }
    }
    word = std::move(merged);
  }
  std::string joined;
  for (std::size_t k = 0; k < word.size(); ++k) joined += (k ? " " : "") + word[k];
  std::lock_guard lock(cache_mutex_);
  cache_.emplace(token, joined);
  return joined;
}

std::vector<int> ClipTokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& piece : pre_tokenize(clean(text))) {
    std::string mapped;
    for (unsigned char b : piece) mapped += byte_encoder_[b];
    std::istringstream parts(bpe(mapped));
    for (std::string p; parts >> p;) ids.push_back(encoder_.at(p));
  }
  return ids;
}

std::vector<std::int64_t> ClipTokenizer::tokenize(std::string_view text, int context_length) const {
  const auto ids = encode(text);
  if (static_cast<int>(ids.size()) + 2 > context_length)
    throw Error(ErrorCode::invalid_argument, "text is " + std::to_string(ids.size()) + " tokens; the text encoder takes at most " +
                                                 std::to_string(context_length - 2));
  std::vector<std::int64_t> out(static_cast<std::size_t>(context_length), 0);
  out[0] = start_;
  std::copy(ids.begin(), ids.end(), out.begin() + 1);
  out[ids.size() + 1] = end_;
  return out;
}

std::string ClipTokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    std::string tok = decoder_.at(static_cast<std::size_t>(id));
    const bool word_end = tok.ends_with("</w>");
    if (word_end) tok.resize(tok.size() - 4);
    for (const char32_t cp : decode_utf8(tok))
      if (auto it = byte_decoder_.find(utf8(cp)); it != byte_decoder_.end()) out += static_cast<char>(it->second);
    if (word_end) out += ' ';
  }
  return out;
}

std::filesystem::path default_bpe_path(const std::filesystem::path& assets_dir) {
  return assets_dir / "bpe_simple_vocab_16e6.txt.gz";
}

}  // namespace clickseg
