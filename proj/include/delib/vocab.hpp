#pragma once

#include <span>
#include <string>
#include <vector>

#include "delib/tensor.hpp"

namespace delib {

using Token = int;
using TokenSeq = std::vector<Token>;

/// Token alphabet: id 0 is BOS, id 1 is EOS, ids 2..V-1 are content tokens.
/// BOS is only ever a decoder input, so model output distributions range over
/// the V-1 ids {EOS, content...}; output index k is token id k + 1.
class Vocab {
 public:
  static constexpr Token bos = 0;
  static constexpr Token eos = 1;

  explicit Vocab(int size);

  int size() const noexcept { return size_; }
  int output_size() const noexcept { return size_ - 1; }
  int content_count() const noexcept { return size_ - 2; }
  bool contains(Token t) const noexcept { return t >= 0 && t < size_; }
  bool is_content(Token t) const noexcept { return t >= 2 && t < size_; }

  static int output_index(Token t) noexcept { return t - 1; }
  static Token output_token(int index) noexcept { return index + 1; }

 private:
  int size_;
};

/// Ends with exactly one EOS, or has length max_len and no EOS. BOS never appears.
bool is_valid_token_seq(std::span<const Token> seq, const Vocab& vocab, int max_len);
void check_token_seq(std::span<const Token> seq, const Vocab& vocab, int max_len);
/// Every id inside [0, V) and the sequence nonempty (used for encoder inputs).
void check_input_tokens(std::span<const Token> seq, const Vocab& vocab);

std::string to_string(std::span<const Token> seq);

/// One training pair. The weight scales the example's share of a batch loss.
struct Example {
  TokenSeq x;
  TokenSeq y;
  double weight = 1.0;

  friend bool operator==(const Example&, const Example&) = default;
};
using Batch = std::vector<Example>;

}  // namespace delib
