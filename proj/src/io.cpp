#include "mvox/io.hpp"

#include "mvox/errors.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace mvox {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

class Writer {
 public:
  void bytes(std::string_view s) { out_.append(s); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  std::string& str() { return out_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::string out_;
};

// Bounds-checked little-endian cursor; `fail` decides the error type.
class Reader {
 public:
  Reader(std::string_view data, bool corruption) : data_(data), corruption_(corruption) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  void seek(std::size_t pos) { pos_ = pos; }

  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8(const char* what) { return static_cast<std::uint8_t>(get(1, what)); }
  std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(get(2, what)); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(get(4, what)); }
  std::uint64_t u64(const char* what) { return get(8, what); }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

  [[noreturn]] void fail(const std::string& msg) const {
    if (corruption_) throw CorruptionError(msg + " at byte " + std::to_string(pos_));
    throw ParseError(msg, pos_);
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (n > remaining()) fail(std::string("truncated ") + what);
  }
  std::uint64_t get(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::string_view data_;
  std::size_t pos_ = 0;
  bool corruption_;
};

std::int16_t to_pcm16(float x) {
  const double v = std::clamp(static_cast<double>(x), -1.0, 1.0) * 32768.0;
  const double r = v < 0 ? -std::floor(-v + 0.5) : std::floor(v + 0.5);
  return static_cast<std::int16_t>(std::clamp(r, -32768.0, 32767.0));
}

}  // namespace

const char* to_string(WavFormat f) { return f == WavFormat::PCM16 ? "pcm16" : "f32"; }

WavFormat parse_wav_format(const std::string& text) {
  if (text == "pcm16") return WavFormat::PCM16;
  if (text == "f32") return WavFormat::F32;
  throw ConfigError("unknown wav format \"" + text + "\" (expected pcm16 or f32)");
}

AudioSegment parse_wav(std::string_view data) {
  Reader r(data, false);
  if (r.bytes(4, "RIFF header") != "RIFF") {
    r.seek(0);
    r.fail("missing RIFF tag");
  }
  const std::uint32_t riff_size = r.u32("RIFF size");
  if (riff_size < 4 || riff_size > data.size() - 8) {
    r.seek(4);
    r.fail("RIFF size " + std::to_string(riff_size) + " inconsistent with file size " + std::to_string(data.size()));
  }
  if (r.bytes(4, "WAVE tag") != "WAVE") {
    r.seek(8);
    r.fail("missing WAVE tag");
  }
  const std::size_t end = 8 + std::size_t(riff_size);

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, block_align = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  while (r.offset() + 8 <= end) {
    const std::size_t chunk_at = r.offset();
    const std::string id(r.bytes(4, "chunk id"));
    const std::uint32_t size = r.u32("chunk size");
    if (size > end - r.offset()) {
      r.seek(chunk_at + 4);
      r.fail("chunk \"" + id + "\" size " + std::to_string(size) + " exceeds the RIFF payload");
    }
    const std::size_t body = r.offset();
    if (id == "fmt ") {
      if (size < 16) r.fail("fmt chunk shorter than 16 bytes");
      format = r.u16("format tag");
      channels = r.u16("channel count");
      sample_rate = r.u32("sample rate");
      r.u32("byte rate");
      block_align = r.u16("block align");
      bits = r.u16("bits per sample");
      if (format == kFormatExtensible) {
        if (size < 40) r.fail("extensible fmt chunk shorter than 40 bytes");
        r.seek(body + 24);
        format = r.u16("sub-format");
      }
      if (channels == 0) {
        r.seek(body + 2);
        r.fail("zero channels");
      }
      if (sample_rate == 0) {
        r.seek(body + 4);
        r.fail("zero sample rate");
      }
      const bool pcm16 = format == kFormatPcm && bits == 16;
      const bool f32 = format == kFormatFloat && bits == 32;
      if (!pcm16 && !f32)
        throw UnsupportedFormatError("unsupported WAV encoding: format tag " + std::to_string(format) + " with " +
                                     std::to_string(bits) + " bits (PCM16 and float32 are supported)");
      if (block_align != channels * bits / 8) {
        r.seek(body + 12);
        r.fail("block align " + std::to_string(block_align) + " does not match " + std::to_string(channels) +
               " channels of " + std::to_string(bits) + " bits");
      }
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) {
        r.seek(chunk_at);
        r.fail("data chunk before fmt chunk");
      }
      if (size % block_align != 0) {
        r.seek(chunk_at + 4);
        r.fail("data size " + std::to_string(size) + " is not a multiple of the frame size " +
               std::to_string(block_align));
      }
      const std::size_t frames = size / block_align;
      AudioSegment out;
      out.sample_rate = sample_rate;
      out.samples.resize(frames);
      if (channels == 1) {
        for (auto& v : out.samples) v = bits == 16 ? float(static_cast<std::int16_t>(r.u16("sample")) / 32768.0)
                                                   : r.f32("sample");
        return out;
      }
      for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0;
        for (std::uint16_t c = 0; c < channels; ++c) {
          if (bits == 16)
            acc += static_cast<std::int16_t>(r.u16("sample")) / 32768.0;
          else
            acc += r.f32("sample");
        }
        out.samples[i] = static_cast<float>(acc / channels);
      }
      return out;
    }
    r.seek(body + size + (size & 1u));
  }
  r.fail(have_fmt ? "no data chunk" : "no fmt chunk");
}

AudioSegment read_wav(const std::string& path) { return parse_wav(read_file(path)); }

std::string encode_wav(const AudioSegment& x, WavFormat format) {
  for (std::size_t i = 0; i < x.samples.size(); ++i)
    if (!std::isfinite(x.samples[i])) throw ContractError("write_wav: sample " + std::to_string(i) + " is not finite");
  if (!(x.sample_rate > 0) || x.sample_rate > 4294967295.0 || x.sample_rate != std::floor(x.sample_rate))
    throw ContractError("write_wav: sample rate must be a positive integer");
  const std::uint16_t bits = format == WavFormat::PCM16 ? 16 : 32;
  const std::uint32_t block = bits / 8;
  const std::uint64_t data_size = std::uint64_t(x.samples.size()) * block;
  if (data_size + 36 > 0xFFFFFFFFull) throw ContractError("write_wav: audio too long for RIFF");
  const auto rate = static_cast<std::uint32_t>(x.sample_rate);

  Writer w;
  w.bytes("RIFF");
  w.u32(static_cast<std::uint32_t>(36 + data_size));
  w.bytes("WAVE");
  w.bytes("fmt ");
  w.u32(16);
  w.u16(format == WavFormat::PCM16 ? kFormatPcm : kFormatFloat);
  w.u16(1);
  w.u32(rate);
  w.u32(rate * block);
  w.u16(static_cast<std::uint16_t>(block));
  w.u16(bits);
  w.bytes("data");
  w.u32(static_cast<std::uint32_t>(data_size));
  for (float s : x.samples) {
    if (format == WavFormat::PCM16)
      w.u16(static_cast<std::uint16_t>(to_pcm16(s)));
    else
      w.f32(s);
  }
  return std::move(w.str());
}

void write_wav(const std::string& path, const AudioSegment& x, WavFormat format) {
  write_file(path, encode_wav(x, format));
}

const TensorRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::vector<TensorRecord> Checkpoint::component(const std::string& prefix) const {
  std::vector<TensorRecord> out;
  for (const auto& t : tensors) {
    if (t.name.compare(0, prefix.size(), prefix) != 0) continue;
    out.push_back(t);
    out.back().name = t.name.substr(prefix.size());
  }
  return out;
}

void Checkpoint::add(const std::string& prefix, const std::vector<TensorRecord>& records) {
  for (const auto& r : records) {
    tensors.push_back(r);
    tensors.back().name = prefix + r.name;
  }
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes("MVOX");
  w.u32(kCheckpointVersion);
  w.u64(ckpt.config.size());
  w.bytes(ckpt.config);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  std::set<std::string> names;
  for (const auto& t : ckpt.tensors) {
    if (!names.insert(t.name).second) throw ContractError("checkpoint: duplicate tensor name " + t.name);
    if (numel(t.shape) != t.values.size())
      throw DimensionError("checkpoint: tensor " + t.name + " has " + std::to_string(t.values.size()) +
                           " values for shape " + shape_string(t.shape));
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name);
    w.u8(static_cast<std::uint8_t>(t.dtype));
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (Index d : t.shape) w.u64(static_cast<std::uint64_t>(d));
    for (Eigen::Index i = 0; i < t.values.size(); ++i) {
      if (t.dtype == DType::F32)
        w.f32(static_cast<float>(t.values[i]));
      else
        w.f64(t.values[i]);
    }
  }
  w.u64(ckpt.state.size());
  w.bytes(ckpt.state);
  const auto& s = w.str();
  w.u32(static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size()))));
  return std::move(w.str());
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != "MVOX") throw CorruptionError("not an MVOX checkpoint (bad magic)");
  if (bytes.size() < 12) throw CorruptionError("checkpoint truncated to " + std::to_string(bytes.size()) + " bytes");
  const std::string_view body = bytes.substr(0, bytes.size() - 4);
  Reader tail(bytes.substr(bytes.size() - 4), true);
  const std::uint32_t stored = tail.u32("checksum");
  const auto actual =
      static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
  Reader r(body, true);
  r.bytes(4, "magic");
  const std::uint32_t version = r.u32("version");
  if (stored != actual) throw CorruptionError("checkpoint checksum mismatch (file truncated or modified)");
  if (version != kCheckpointVersion)
    throw UnsupportedFormatError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");

  Checkpoint ck;
  ck.config = std::string(r.bytes(r.u64("config length"), "config"));
  const std::uint32_t count = r.u32("tensor count");
  std::set<std::string> names;
  for (std::uint32_t k = 0; k < count; ++k) {
    TensorRecord t;
    t.name = std::string(r.bytes(r.u32("name length"), "tensor name"));
    if (!names.insert(t.name).second) r.fail("duplicate tensor name " + t.name);
    const std::uint8_t dtype = r.u8("dtype");
    if (dtype != static_cast<std::uint8_t>(DType::F32) && dtype != static_cast<std::uint8_t>(DType::F64))
      r.fail("unknown dtype " + std::to_string(dtype) + " for " + t.name);
    t.dtype = static_cast<DType>(dtype);
    const std::uint32_t rank = r.u32("rank");
    std::uint64_t n = 1;
    const std::size_t elem = t.dtype == DType::F32 ? 4 : 8;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint64_t e = r.u64("extent");
      if (e == 0 || e > r.remaining() || n > r.remaining() / e) r.fail("implausible extent for " + t.name);
      n *= e;
      t.shape.push_back(static_cast<Index>(e));
    }
    if (n * elem > r.remaining()) r.fail("truncated data for " + t.name);
    t.values.resize(static_cast<Eigen::Index>(n));
    for (std::uint64_t i = 0; i < n; ++i)
      t.values[static_cast<Eigen::Index>(i)] = t.dtype == DType::F32 ? double(r.f32("value")) : r.f64("value");
    ck.tensors.push_back(std::move(t));
  }
  ck.state = std::string(r.bytes(r.u64("state length"), "state"));
  if (r.remaining() != 0) r.fail("trailing bytes after state");
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) { write_file(path, serialize_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw FileError("read failed: " + path);
  return std::move(ss).str();
}

void write_file(const std::string& path, std::string_view bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FileError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FileError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw FileError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

Tensor<float> parse_npy(std::string_view bytes) {
  static constexpr std::string_view kMagic("\x93NUMPY", 6);
  if (bytes.size() < 10 || bytes.substr(0, 6) != kMagic) throw ParseError("npy: bad magic", 0);
  if (bytes[6] != 1) throw UnsupportedFormatError("npy: only format version 1.0 is supported");
  const std::size_t header_len = static_cast<unsigned char>(bytes[8]) | static_cast<unsigned char>(bytes[9]) << 8;
  if (bytes.size() < 10 + header_len) throw ParseError("npy: truncated header", bytes.size());
  const std::string header(bytes.substr(10, header_len));

  auto value_of = [&](const std::string& key) {
    const auto k = header.find("'" + key + "'");
    if (k == std::string::npos) throw ParseError("npy: header lacks '" + key + "'", 10);
    auto v = header.find(':', k);
    if (v == std::string::npos) throw ParseError("npy: malformed header", 10 + k);
    ++v;
    while (v < header.size() && header[v] == ' ') ++v;
    return v;
  };
  const auto d = value_of("descr");
  const std::string descr = header.substr(d, 5);
  const bool f64 = descr == "'<f8'";
  if (!f64 && descr != "'<f4'") throw UnsupportedFormatError("npy: dtype must be <f4 or <f8, got " + descr);
  if (header.compare(value_of("fortran_order"), 5, "False") != 0)
    throw UnsupportedFormatError("npy: Fortran-order arrays are not supported");
  const auto sh = value_of("shape");
  const auto close = header.find(')', sh);
  if (header[sh] != '(' || close == std::string::npos) throw ParseError("npy: malformed shape", 10 + sh);
  Shape shape;
  std::istringstream dims(header.substr(sh + 1, close - sh - 1));
  for (std::string tok; std::getline(dims, tok, ',');) {
    if (tok.find_first_not_of(' ') == std::string::npos) continue;
    shape.push_back(std::stoll(tok));
  }
  if (shape.size() != 2) throw DimensionError("npy: expected a 2-D array, got rank " + std::to_string(shape.size()));

  const std::size_t count = static_cast<std::size_t>(shape[0] * shape[1]);
  const std::size_t width = f64 ? 8 : 4;
  const std::size_t body = 10 + header_len;
  if (bytes.size() != body + count * width)
    throw ParseError("npy: data holds " + std::to_string(bytes.size() - body) + " bytes, expected " +
                         std::to_string(count * width),
                     body);
  Tensor<float> out(shape);
  for (std::size_t i = 0; i < count; ++i) {
    if (f64) {
      double v;
      std::memcpy(&v, bytes.data() + body + 8 * i, 8);
      out.data()[static_cast<Index>(i)] = static_cast<float>(v);
    } else {
      std::memcpy(&out.data()[static_cast<Index>(i)], bytes.data() + body + 4 * i, 4);
    }
  }
  return out;
}

Tensor<float> read_npy(const std::string& path) { return parse_npy(read_file(path)); }

void write_npy(const std::string& path, const Tensor<float>& x) {
  if (x.ndim() != 2) throw DimensionError("npy: expected a 2-D tensor, got " + shape_string(x.shape()));
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + std::to_string(x.dim(0)) + ", " +
                       std::to_string(x.dim(1)) + "), }";
  header.append(63 - (10 + header.size()) % 64, ' ');
  header += '\n';
  std::string bytes("\x93NUMPY\x01\x00", 8);
  bytes += static_cast<char>(header.size() & 0xff);
  bytes += static_cast<char>(header.size() >> 8);
  bytes += header;
  bytes.append(reinterpret_cast<const char*>(x.ptr()), static_cast<std::size_t>(x.size()) * 4);
  write_file(path, bytes);
}

}  // namespace mvox
