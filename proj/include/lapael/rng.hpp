#ifndef LAPAEL_RNG_HPP
#define LAPAEL_RNG_HPP

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace lapael {

// splitmix64; used to derive decorrelated stream seeds from one master seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Self-contained xoshiro256** generator. All distributions are hand-rolled on
// top of it so streams are reproducible independent of the standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Strictly inside (0,1); the concrete-relaxation mask needs open bounds.
    double uniform01() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller without spare caching: two uniforms per draw, so the stream
    // position is a pure function of the draw count.
    double normal() {
        const double u1 = uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    std::vector<double> normal_vec(std::size_t n) {
        std::vector<double> out(n);
        for (auto& x : out) x = normal();
        return out;
    }

    // Uniform integer in [0, n) by rejection; n must be > 0.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t lim = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= lim);
        return x % n;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }
    std::uint64_t s_[4];
};

// Named sub-stream of a master seed. Noise, data order, init, and corpus
// generation each get their own stream so consuming extra draws in one
// cannot shift another (plain vs noisy fine-tuning must shuffle identically).
inline Rng derive_rng(std::uint64_t master_seed, std::string_view stream_name) {
    std::uint64_t mix = master_seed ^ fnv1a64(stream_name);
    return Rng(splitmix64(mix));
}

} // namespace lapael

#endif
