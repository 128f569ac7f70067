#include "delib/vocab.hpp"

#include <algorithm>

namespace delib {

Vocab::Vocab(int size) : size_(size) {
  if (size < 3) {
    throw ContractViolation("vocabulary needs V >= 3 (BOS, EOS and a content token), got " +
                            std::to_string(size));
  }
}

bool is_valid_token_seq(std::span<const Token> seq, const Vocab& vocab, int max_len) {
  if (seq.empty() || static_cast<int>(seq.size()) > max_len) return false;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const Token t = seq[i];
    if (!vocab.contains(t) || t == Vocab::bos) return false;
    if (t == Vocab::eos && i + 1 != seq.size()) return false;
  }
  return seq.back() == Vocab::eos || static_cast<int>(seq.size()) == max_len;
}

void check_token_seq(std::span<const Token> seq, const Vocab& vocab, int max_len) {
  if (!is_valid_token_seq(seq, vocab, max_len)) {
    throw ContractViolation("invalid token sequence " + to_string(seq) + " for V=" +
                            std::to_string(vocab.size()) + ", T_max=" + std::to_string(max_len));
  }
}

void check_input_tokens(std::span<const Token> seq, const Vocab& vocab) {
  if (seq.empty()) throw ContractViolation("input sequence is empty");
  for (Token t : seq) {
    if (!vocab.contains(t)) {
      throw ContractViolation("token id " + std::to_string(t) + " outside vocabulary of size " +
                              std::to_string(vocab.size()));
    }
  }
}

std::string to_string(std::span<const Token> seq) {
  std::string s = "[";
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(seq[i]);
  }
  return s + "]";
}

}  // namespace delib
