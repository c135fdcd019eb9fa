#include "resq/stream.hpp"

#include <fstream>
#include <sstream>

#include "resq/common.hpp"
#include "resq/rng.hpp"

namespace resq::stream {

std::vector<int32_t> read_tokens(const std::string& path, int vocab) {
    std::ifstream f(path);
    require(f.good(), "stream: cannot open '" + path + "'");
    std::vector<int32_t> tokens;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        int32_t v;
        try {
            v = std::stoi(line);
        } catch (...) {
            throw Error("stream: bad token line '" + line + "' in " + path);
        }
        require(v >= 0 && v < vocab,
                "stream: token " + std::to_string(v) + " outside vocab " + std::to_string(vocab));
        tokens.push_back(v);
    }
    require(!tokens.empty(), "stream: '" + path + "' is empty");
    return tokens;
}

void write_tokens(const std::string& path, const std::vector<int32_t>& tokens) {
    std::ofstream f(path, std::ios::trunc);
    require(f.good(), "stream: cannot open '" + path + "' for writing");
    for (int32_t t : tokens) f << t << '\n';
    require(f.good(), "stream: write to '" + path + "' failed");
}

std::vector<int32_t> markov_tokens(uint64_t seed, int n, int vocab) {
    require(n >= 1 && vocab >= 4, "stream: need n >= 1 and vocab >= 4");
    Rng rng(seed);
    std::vector<int32_t> out;
    out.reserve(n);
    int32_t prev = static_cast<int32_t>(rng.below(vocab));
    int32_t cur = static_cast<int32_t>(rng.below(vocab));
    for (int i = 0; i < n; ++i) {
        // four context-dependent successors with fixed probabilities
        const uint64_t h = (static_cast<uint64_t>(prev) * 1000003u + cur) * 0x9e3779b97f4a7c15ull +
                           seed * 0x2545f4914f6cdd1dull;
        const double u = rng.uniform();
        int pick = (u < 0.5) ? 0 : (u < 0.75) ? 1 : (u < 0.9) ? 2 : 3;
        int32_t next = static_cast<int32_t>((h >> (13 * pick)) % vocab);
        out.push_back(next);
        prev = cur;
        cur = next;
    }
    return out;
}

std::vector<int32_t> resolve_stream(const std::string& spec, int vocab) {
    if (spec.rfind("grammar:", 0) == 0) {
        std::istringstream ss(spec.substr(8));
        std::string seed_s, n_s;
        require(std::getline(ss, seed_s, ':') && std::getline(ss, n_s, ':'),
                "stream: expected grammar:<seed>:<tokens>, got '" + spec + "'");
        return markov_tokens(std::stoull(seed_s), std::stoi(n_s), vocab);
    }
    return read_tokens(spec, vocab);
}

}  // namespace resq::stream
