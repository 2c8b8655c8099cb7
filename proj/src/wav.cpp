#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "s3l/dsp.hpp"

namespace s3l {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

std::uint32_t get_u32(const std::string& s, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[off + static_cast<std::size_t>(i)]);
  return v;
}

std::uint16_t get_u16(const std::string& s, std::size_t off) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(s[off]) |
                                    (static_cast<unsigned char>(s[off + 1]) << 8));
}

}  // namespace

void write_wav(const std::string& path, const Waveform& w) {
  const std::uint32_t n = static_cast<std::uint32_t>(w.samples.size());
  const std::uint32_t data_bytes = n * 2;
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * 2);
  put_u16(out, 2);   // block align
  put_u16(out, 16);  // bits per sample
  out += "data";
  put_u32(out, data_bytes);
  for (const double v : w.samples) {
    const double c = std::clamp(v, -1.0, 1.0);
    const std::int16_t q = static_cast<std::int16_t>(std::lround(c * 32767.0));
    put_u16(out, static_cast<std::uint16_t>(q));
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write: " + path);
}

Waveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (s.size() < 44 || s.compare(0, 4, "RIFF") != 0 || s.compare(8, 4, "WAVE") != 0)
    throw CorruptionError("not a RIFF/WAVE file: " + path);

  Waveform w;
  bool got_fmt = false;
  std::size_t off = 12;
  while (off + 8 <= s.size()) {
    const std::string id = s.substr(off, 4);
    const std::uint32_t len = get_u32(s, off + 4);
    const std::size_t body = off + 8;
    if (body + len > s.size()) throw CorruptionError("truncated chunk '" + id + "': " + path);
    if (id == "fmt ") {
      if (len < 16) throw CorruptionError("short fmt chunk: " + path);
      if (get_u16(s, body) != 1 || get_u16(s, body + 2) != 1 || get_u16(s, body + 14) != 16)
        throw IoError("expected mono 16-bit PCM: " + path);
      w.sample_rate = static_cast<int>(get_u32(s, body + 4));
      got_fmt = true;
    } else if (id == "data") {
      if (!got_fmt) throw CorruptionError("data chunk before fmt: " + path);
      const std::size_t count = len / 2;
      w.samples.resize(count);
      for (std::size_t i = 0; i < count; ++i) {
        const std::int16_t q = static_cast<std::int16_t>(get_u16(s, body + 2 * i));
        w.samples[i] = static_cast<double>(q) / 32767.0;
      }
      return w;
    }
    off = body + len + (len & 1);
  }
  throw CorruptionError("no data chunk: " + path);
}

}  // namespace s3l
