#pragma once

// Little-endian u32/f32 helpers shared by the binary file formats.

#include <bit>
#include <cstdint>
#include <string>

namespace easynlp::binio {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

inline void put_string(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

// Throws Error(message) when reading past the end.
template <typename Error>
class Reader {
 public:
  Reader(const std::string& bytes, std::string truncated_message)
      : bytes_(bytes), truncated_message_(std::move(truncated_message)) {}

  std::string take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw Error(truncated_message_);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    const auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  std::string string() { return take(u32()); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::string truncated_message_;
  std::size_t pos_ = 0;
};

}  // namespace easynlp::binio
