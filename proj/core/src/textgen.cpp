#include "sdlstm/textgen.hpp"

#include <algorithm>
#include <cctype>
#include <iterator>
#include <vector>

#include "sdlstm/common.hpp"

namespace sdlstm {

namespace {

const char* const kOnsets[] = {"",   "b",  "c",  "d",  "f",  "g",  "h",  "l",  "m",  "n",
                               "p",  "r",  "s",  "t",  "v",  "w",  "br", "ch", "cl", "cr",
                               "dr", "fl", "fr", "gr", "pl", "pr", "sh", "sl", "sp", "st",
                               "th", "tr"};
const char* const kNuclei[] = {"a", "e", "i", "o", "u", "ai", "ea", "ee", "oa", "ou"};
const char* const kCodas[] = {"",   "",   "d",  "l",  "ll", "m",  "n",  "nd", "ng",
                              "nt", "p",  "r",  "rd", "rn", "s",  "st", "t",  "th"};

// High-frequency glue words keep the byte statistics close to prose.
const char* const kFunctionWords[] = {
    "the", "of",   "and",  "to",   "a",    "in",   "that", "it",   "was", "for",
    "on",  "as",   "with", "his",  "they", "at",   "be",   "this", "had", "not",
    "are", "but",  "from", "or",   "have", "an",   "by",   "one",  "all", "her",
    "so",  "when", "then", "them", "she",  "he",   "we",   "what", "who", "which"};

template <typename A>
const char* pick(Rng& rng, const A& table) {
  return table[rng.next_below(std::size(table))];
}

std::string make_word(Rng& rng) {
  const int syllables = 1 + static_cast<int>(rng.next_below(3));
  std::string w;
  for (int s = 0; s < syllables; ++s) {
    w += pick(rng, kOnsets);
    w += pick(rng, kNuclei);
    if (s + 1 == syllables || rng.next_unit() < 0.4) w += pick(rng, kCodas);
  }
  return w;
}

}  // namespace

std::string generate_text(std::size_t target_bytes, std::uint64_t seed) {
  check_value(target_bytes >= 1, "generate_text: target size must be positive");
  Rng rng(seed);

  std::vector<std::string> words(std::begin(kFunctionWords), std::end(kFunctionWords));
  constexpr std::size_t kVocabSize = 900;
  while (words.size() < kVocabSize) {
    std::string w = make_word(rng);
    if (w.size() >= 2 && std::find(words.begin(), words.end(), w) == words.end()) {
      words.push_back(std::move(w));
    }
  }

  // Zipf weights over ranks; cumulative table for inverse-CDF sampling.
  std::vector<double> cumulative(words.size());
  double total = 0.0;
  for (std::size_t i = 0; i < words.size(); ++i) {
    total += 1.0 / static_cast<double>(i + 1);
    cumulative[i] = total;
  }
  auto sample_word = [&]() -> const std::string& {
    const double u = rng.next_unit() * total;
    const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), u);
    return words[static_cast<std::size_t>(it - cumulative.begin())];
  };

  std::string text;
  text.reserve(target_bytes + 256);
  int sentences_left = 3 + static_cast<int>(rng.next_below(6));
  while (text.size() < target_bytes) {
    const int length = 4 + static_cast<int>(rng.next_below(11));
    for (int i = 0; i < length; ++i) {
      std::string w = sample_word();
      if (i == 0) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
      text += w;
      if (i + 1 < length) {
        if (i > 0 && i + 2 < length && rng.next_unit() < 0.12) text += ',';
        text += ' ';
      }
    }
    const double end = rng.next_unit();
    text += end < 0.86 ? '.' : (end < 0.94 ? '?' : '!');
    if (--sentences_left == 0) {
      text += "\n\n";
      sentences_left = 3 + static_cast<int>(rng.next_below(6));
    } else {
      text += ' ';
    }
  }
  if (text.back() == ' ') text.pop_back();  // loop may exit right after a sentence join
  text += '\n';
  return text;
}

}  // namespace sdlstm
