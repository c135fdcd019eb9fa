#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace resq::stream {

// newline-delimited token ids
std::vector<int32_t> read_tokens(const std::string& path, int vocab);
void write_tokens(const std::string& path, const std::vector<int32_t>& tokens);

// seeded order-2 Markov chain over [0, vocab)
std::vector<int32_t> markov_tokens(uint64_t seed, int n, int vocab);

// "grammar:<seed>:<n>" generates a Markov stream, anything else is a file path
std::vector<int32_t> resolve_stream(const std::string& spec, int vocab);

}  // namespace resq::stream
