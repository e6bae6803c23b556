#ifndef ELSD_VERSION_HPP
#define ELSD_VERSION_HPP

namespace elsd {
inline constexpr const char* kVersion = "0.1.0";
} // namespace elsd

#endif // ELSD_VERSION_HPP
