#pragma once

#include <cstdint>
#include <cstring>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>

namespace tvae {

/// 64-bit FNV-1a, fed incrementally.
class Fingerprint {
 public:
  Fingerprint& bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fingerprint& add(double v) { return bytes(&v, sizeof v); }
  Fingerprint& add(std::uint64_t v) { return bytes(&v, sizeof v); }
  Fingerprint& add(std::string_view s) {
    add(static_cast<std::uint64_t>(s.size()));
    return bytes(s.data(), s.size());
  }
  template <class T>
  Fingerprint& add_all(std::span<const T> values) {
    add(static_cast<std::uint64_t>(values.size()));
    for (const T& v : values) add(static_cast<std::conditional_t<std::is_floating_point_v<T>, double, std::uint64_t>>(v));
    return *this;
  }

  std::uint64_t value() const noexcept { return state_; }
  std::string hex() const {
    std::ostringstream o;
    o << std::hex << std::setw(16) << std::setfill('0') << state_;
    return o.str();
  }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace tvae
