#include "sepg/rng.hpp"

#include <cmath>
#include <sstream>

#include "sepg/error.hpp"

namespace sepg {

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
    if (hi < lo) throw ParameterError("uniform_int upper bound below lower bound");
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    // Rejection sampling keeps the draw unbiased.
    uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t r;
    do {
        r = engine_();
    } while (r >= limit);
    return lo + static_cast<int64_t>(r % span);
}

double Rng::normal(double mean, double stddev) {
    if (have_spare_) {
        have_spare_ = false;
        return mean + stddev * spare_;
    }
    double u1, u2;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double mag = std::sqrt(-2.0 * std::log(u1));
    double z0 = mag * std::cos(2.0 * M_PI * u2);
    double z1 = mag * std::sin(2.0 * M_PI * u2);
    spare_ = z1;
    have_spare_ = true;
    return mean + stddev * z0;
}

Tensor Rng::normal_tensor(std::vector<int64_t> shape, double mean, double stddev) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = normal(mean, stddev);
    return t;
}

Tensor Rng::uniform_tensor(std::vector<int64_t> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(lo, hi);
    return t;
}

std::string Rng::serialize_state() const {
    std::ostringstream os;
    os << engine_;
    os << " " << (have_spare_ ? 1 : 0);
    // Spare Gaussian stored bit-exactly via hex float.
    char buf[64];
    std::snprintf(buf, sizeof(buf), " %a", spare_);
    os << buf;
    return os.str();
}

void Rng::restore_state(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
    int spare_flag = 0;
    std::string spare_hex;
    is >> spare_flag >> spare_hex;
    if (is.fail()) throw IntegrityError("rng state string is malformed");
    have_spare_ = spare_flag != 0;
    spare_ = std::strtod(spare_hex.c_str(), nullptr);
}

} // namespace sepg
