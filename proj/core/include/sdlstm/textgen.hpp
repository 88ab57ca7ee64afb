#pragma once

#include <cstdint>
#include <string>

namespace sdlstm {

// Deterministic English-like filler text: a seeded pseudo-word vocabulary
// sampled with a Zipf-shaped distribution, arranged into sentences and
// paragraphs. Provisions byte-level training corpora of any size without
// shipping one; identical (seed, target) always yields identical bytes.
// Output ends at a sentence boundary at or past target_bytes.
std::string generate_text(std::size_t target_bytes, std::uint64_t seed);

}  // namespace sdlstm
