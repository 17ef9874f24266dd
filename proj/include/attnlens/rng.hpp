#pragma once

#include <random>

#include "attnlens/tensor.hpp"

namespace attnlens {

// Seeded generator with hand-rolled value mapping so streams are identical
// across standard-library implementations.
class Rng {
public:
    explicit Rng(unsigned long long seed) : gen_(seed) {}

    Scalar uniform(Scalar lo, Scalar hi) {
        const Scalar u = static_cast<Scalar>(gen_() >> 11) * (1.0 / 9007199254740992.0);
        return lo + (hi - lo) * u;
    }

    // Inclusive bounds.
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(gen_() % static_cast<unsigned long long>(hi - lo + 1));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(uniform_int(0, i))]);
        }
    }

private:
    std::mt19937_64 gen_;
};

} // namespace attnlens
