#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

namespace synb {

// Counter-free PRNG with explicit mixing so that derived streams are
// reproducible across platforms (std distributions are implementation
// defined, so sampling is done by hand here).
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(splitmix(seed + 0x9e3779b97f4a7c15ull)) {}

    std::uint64_t next_u64() {
        state_ = splitmix(state_);
        return state_;
    }

    // Derive an independent stream keyed by up to three indices.
    Rng child(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) const {
        std::uint64_t s = state_;
        s = splitmix(s ^ (a * 0xbf58476d1ce4e5b9ull));
        s = splitmix(s ^ (b * 0x94d049bb133111ebull));
        s = splitmix(s ^ (c * 0xd6e8feb86659fd93ull));
        Rng r(0);
        r.state_ = s;
        return r;
    }

    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // [0, n)
    int uniform_int(int n) {
        return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
    }

    double normal() {
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 1e-300) u1 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            int j = uniform_int(i + 1);
            std::swap(v[i], v[static_cast<std::size_t>(j)]);
        }
    }

    // k distinct indices in [0, n), order randomized.
    std::vector<int> sample_without_replacement(int n, int k) {
        std::vector<int> idx(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
        for (int i = 0; i < k; ++i) {
            int j = i + uniform_int(n - i);
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        }
        idx.resize(static_cast<std::size_t>(k));
        return idx;
    }

    std::string serialize() const {
        std::ostringstream os;
        os << state_;
        return os.str();
    }

    static Rng deserialize(const std::string& s) {
        Rng r(0);
        std::istringstream is(s);
        is >> r.state_;
        return r;
    }

private:
    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    std::uint64_t state_;
};

}  // namespace synb
