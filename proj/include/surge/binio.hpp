#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>

#include "surge/common.hpp"

namespace surge::binio {

// Little-endian 64-bit field writer.
class Out {
 public:
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) {
    std::uint64_t b;
    std::memcpy(&b, &v, 8);
    u64(b);
  }
  void raw(const std::string& s) { buf_ += s; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class In {
 public:
  In(std::string data, std::string what) : d_(std::move(data)), what_(std::move(what)) {}
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(d_[p_ + i])) << (8 * i);
    p_ += 8;
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() {
    std::uint64_t b = u64();
    double v;
    std::memcpy(&v, &b, 8);
    return v;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = d_.substr(p_, n);
    p_ += n;
    return s;
  }
  bool done() const { return p_ == d_.size(); }

 private:
  void need(std::size_t n) const {
    if (p_ + n > d_.size()) throw Error("truncated " + what_);
  }
  std::string d_, what_;
  std::size_t p_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& data);

}  // namespace surge::binio
