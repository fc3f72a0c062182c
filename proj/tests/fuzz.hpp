#pragma once

// Reply fuzzer for the answer parsers: raw bytes, label soup and mangled
// versions of well-formed replies.

#include <string>
#include <vector>

#include "clot/random.hpp"

namespace clot::fixture {

inline std::string fuzz_reply(Rng& rng) {
  static const std::vector<std::string> pieces{
      "A", "B", "C", "D", "E", "F", "Z", "a", "1", "2", "3", "4", "5", "6", "10", ".", ")", "(", " ", "\n", "\t",
      "A.", "B)", "1.", "5. E.", "xxx", "Option", "The satisfactory option is", "\xff", "\xe3\x81\x82", "\0", "..",
      "AB", "A.B.C.", "12.", "-", "\"", "猫", "E.E.E."};
  std::string out;
  switch (rng.index(4)) {
    case 0: {
      auto n = rng.index(64);
      for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<char>(rng.index(256)));
      break;
    }
    case 1: {
      auto n = rng.index(24);
      for (std::size_t i = 0; i < n; ++i) out += pieces[rng.index(pieces.size())];
      break;
    }
    case 2: {
      auto perm = rng.permutation(5);
      for (std::size_t k = 0; k < perm.size(); ++k) {
        out += std::to_string(k + 1) + ". " + std::string(1, static_cast<char>('A' + perm[k])) + ". option text. ";
      }
      auto cuts = rng.index(4);
      for (std::size_t c = 0; c < cuts && !out.empty(); ++c) {
        auto at = rng.index(out.size());
        if (rng.bernoulli(0.5)) {
          out.erase(at, 1 + rng.index(6));
        } else {
          out.insert(at, pieces[rng.index(pieces.size())]);
        }
      }
      break;
    }
    default: {
      out = std::string(1, static_cast<char>('A' + rng.index(6))) + ". some content";
      if (rng.bernoulli(0.5)) out = pieces[rng.index(pieces.size())] + out;
      if (rng.bernoulli(0.3)) out.resize(rng.index(out.size() + 1));
      break;
    }
  }
  return out;
}

}  // namespace clot::fixture
