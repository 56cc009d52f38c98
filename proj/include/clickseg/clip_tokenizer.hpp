#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace clickseg {

/// Byte-level BPE tokenizer of the CLIP text encoder. Text is HTML-unescaped,
/// whitespace-collapsed and lower-cased before splitting; mojibake repair is
/// not attempted.
class ClipTokenizer {
 public:
  static constexpr int kContextLength = 77;

  /// `bpe_path` is the gzipped merges file shipped with CLIP.
  explicit ClipTokenizer(const std::filesystem::path& bpe_path);

  int start_token() const noexcept { return start_; }
  int end_token() const noexcept { return end_; }
  std::size_t vocab_size() const noexcept { return encoder_.size(); }

  /// Token ids without start/end markers.
  std::vector<int> encode(std::string_view text) const;

  /// Start + tokens + end, zero-padded to `context_length`. Throws
  /// invalid_argument when the phrase does not fit.
  std::vector<std::int64_t> tokenize(std::string_view text, int context_length = kContextLength) const;

  std::string decode(const std::vector<int>& ids) const;

 private:
  std::string bpe(const std::string& token) const;

  std::unordered_map<std::string, int> encoder_;
  std::vector<std::string> decoder_;
  std::map<std::pair<std::string, std::string>, int> ranks_;
  std::string byte_encoder_[256];
  std::unordered_map<std::string, std::uint8_t> byte_decoder_;
  int start_ = 0;
  int end_ = 0;
  mutable std::mutex cache_mutex_;
  mutable std::unordered_map<std::string, std::string> cache_;
};

/// Location of the tokenizer vocabulary under an assets directory.
std::filesystem::path default_bpe_path(const std::filesystem::path& assets_dir);

}  // namespace clickseg
