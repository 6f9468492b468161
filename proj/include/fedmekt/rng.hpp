#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace fedmekt {

// splitmix64 step, used to derive independent stream seeds from
// (seed, round, client, ...) tuples.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d);

// mt19937_64 with hand-rolled value mappings. The engine output sequence is
// pinned by the standard; std::*_distribution is not, so every mapping here
// is written out to keep runs bit-identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t raw() { return eng_(); }

    // Uniform on [0,1) with 53-bit resolution.
    double uniform();
    double uniform(double lo, double hi);

    // Unbiased integer in [0,n) via rejection sampling.
    std::uint64_t bounded(std::uint64_t n);

    // Standard normal via Box-Muller (second draw cached).
    double normal();

    // Gamma(shape,1) via Marsaglia-Tsang, with the boost trick for shape<1.
    double gamma(double shape);

    // Dirichlet with symmetric concentration alpha.
    std::vector<double> dirichlet(double alpha, std::size_t k);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // m distinct indices from [0,n), in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t m);

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace fedmekt
