#include "compfit/signal_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string_view>

namespace compfit {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<char>((v >> shift) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int shift = 0; shift < 64; shift += 8) out.push_back(static_cast<char>((v >> shift) & 0xFF));
}

int bits_of(SampleFormat format) {
  switch (format) {
    case SampleFormat::Pcm16: return 16;
    case SampleFormat::Pcm24: return 24;
    case SampleFormat::Float32: return 32;
    case SampleFormat::Float64: return 64;
  }
  return 0;
}

std::int32_t to_pcm(double v, int bits) {
  const double scale = std::ldexp(1.0, bits - 1);
  const double q = std::round(v * scale);
  return static_cast<std::int32_t>(std::clamp(q, -scale, scale - 1.0));
}

double quantize_sample(double v, SampleFormat format) {
  switch (format) {
    case SampleFormat::Pcm16: return to_pcm(v, 16) / 32768.0;
    case SampleFormat::Pcm24: return to_pcm(v, 24) / 8388608.0;
    case SampleFormat::Float32: return static_cast<double>(static_cast<float>(v));
    case SampleFormat::Float64: return v;
  }
  return v;
}

}  // namespace

AudioBuffer::AudioBuffer(std::vector<double> samples, int sample_rate)
    : samples_(std::move(samples)), sample_rate_(sample_rate) {
  if (samples_.empty()) throw std::invalid_argument("audio buffer is empty");
  if (sample_rate_ <= 0) throw std::invalid_argument("sample rate must be positive");
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    if (!std::isfinite(samples_[i])) {
      throw std::invalid_argument("non-finite sample at index " + std::to_string(i));
    }
  }
}

AudioBuffer load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AudioFileError("cannot open '" + path.string() + "'");
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::string where = "'" + path.string() + "': ";

  if (bytes.size() < 12 || std::string_view(bytes.data(), 4) != "RIFF" ||
      std::string_view(bytes.data() + 8, 4) != "WAVE") {
    throw AudioFileError(where + "not a RIFF/WAVE file");
  }

  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t bits = 0;
  bool have_fmt = false;
  const unsigned char* pcm = nullptr;
  std::size_t pcm_bytes = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string_view id(bytes.data() + pos, 4);
    const std::size_t size = read_u32(data + pos + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min(size, bytes.size() - body);
    if (id == "fmt ") {
      if (avail < 16) throw AudioFileError(where + "truncated fmt chunk");
      format = read_u16(data + body);
      channels = read_u16(data + body + 2);
      rate = read_u32(data + body + 4);
      bits = read_u16(data + body + 14);
      if (format == kFormatExtensible) {
        if (avail < 26) throw AudioFileError(where + "truncated extensible fmt chunk");
        format = read_u16(data + body + 24);
      }
      have_fmt = true;
    } else if (id == "data") {
      pcm = data + body;
      pcm_bytes = avail;
    }
    pos = body + size + (size & 1U);
  }

  if (!have_fmt) throw AudioFileError(where + "missing fmt chunk");
  if (pcm == nullptr) throw AudioFileError(where + "missing data chunk");
  if (channels != 1) throw AudioFileError(where + "multichannel input");

  const std::size_t width = bits / 8;
  const bool pcm_ok = format == kFormatPcm && (bits == 16 || bits == 24);
  const bool float_ok = format == kFormatFloat && (bits == 32 || bits == 64);
  if (!pcm_ok && !float_ok) {
    throw AudioFileError(where + "unsupported encoding (format " + std::to_string(format) + ", " +
                         std::to_string(bits) + " bits)");
  }

  const std::size_t count = pcm_bytes / width;
  std::vector<double> samples(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned char* p = pcm + i * width;
    if (format == kFormatPcm && bits == 16) {
      samples[i] = static_cast<std::int16_t>(read_u16(p)) / 32768.0;
    } else if (format == kFormatPcm) {
      std::int32_t v = p[0] | (p[1] << 8) | (p[2] << 16);
      if (v & 0x800000) v -= 0x1000000;
      samples[i] = v / 8388608.0;
    } else if (bits == 32) {
      samples[i] = std::bit_cast<float>(read_u32(p));
    } else {
      const std::uint64_t lo = read_u32(p);
      const std::uint64_t hi = read_u32(p + 4);
      samples[i] = std::bit_cast<double>(lo | (hi << 32));
    }
  }
  try {
    return AudioBuffer(std::move(samples), static_cast<int>(rate));
  } catch (const std::invalid_argument& e) {
    throw AudioFileError(where + e.what());
  }
}

void save_wav(const std::filesystem::path& path, const AudioBuffer& buffer, SampleFormat format) {
  const int bits = bits_of(format);
  const std::uint32_t width = static_cast<std::uint32_t>(bits / 8);
  const bool is_float = format == SampleFormat::Float32 || format == SampleFormat::Float64;
  const auto data_bytes = static_cast<std::uint32_t>(buffer.size() * width);

  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, is_float ? kFormatFloat : kFormatPcm);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(buffer.sample_rate()));
  put_u32(out, static_cast<std::uint32_t>(buffer.sample_rate()) * width);
  put_u16(out, static_cast<std::uint16_t>(width));
  put_u16(out, static_cast<std::uint16_t>(bits));
  out += "data";
  put_u32(out, data_bytes);
  for (double v : buffer.samples()) {
    switch (format) {
      case SampleFormat::Pcm16:
        put_u16(out, static_cast<std::uint16_t>(to_pcm(v, 16)));
        break;
      case SampleFormat::Pcm24: {
        const auto q = static_cast<std::uint32_t>(to_pcm(v, 24));
        out.push_back(static_cast<char>(q & 0xFF));
        out.push_back(static_cast<char>((q >> 8) & 0xFF));
        out.push_back(static_cast<char>((q >> 16) & 0xFF));
        break;
      }
      case SampleFormat::Float32:
        put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        break;
      case SampleFormat::Float64:
        put_u64(out, std::bit_cast<std::uint64_t>(v));
        break;
    }
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw AudioFileError("cannot write '" + path.string() + "'");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw AudioFileError("write failed for '" + path.string() + "'");
}

AudioBuffer quantize(const AudioBuffer& buffer, SampleFormat format) {
  std::vector<double> q(buffer.size());
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = quantize_sample(buffer[i], format);
  return AudioBuffer(std::move(q), buffer.sample_rate());
}

SampleFormat parse_sample_format(const std::string& name) {
  if (name == "pcm16") return SampleFormat::Pcm16;
  if (name == "pcm24") return SampleFormat::Pcm24;
  if (name == "float32") return SampleFormat::Float32;
  if (name == "float64") return SampleFormat::Float64;
  throw std::invalid_argument("unknown sample format '" + name +
                              "' (expected pcm16, pcm24, float32 or float64)");
}

std::string to_string(SampleFormat format) {
  switch (format) {
    case SampleFormat::Pcm16: return "pcm16";
    case SampleFormat::Pcm24: return "pcm24";
    case SampleFormat::Float32: return "float32";
    case SampleFormat::Float64: return "float64";
  }
  return "unknown";
}

Chunk ChunkPlan::chunk(std::size_t i) const {
  const std::size_t begin = chunk_starts.at(i);
  const std::size_t end = std::min(n_samples, begin + chunk_len);
  const std::size_t eval_begin = i == 0 ? begin : begin + eval_offset;
  return {begin, end, eval_begin};
}

std::vector<Chunk> ChunkPlan::chunks() const {
  std::vector<Chunk> out;
  out.reserve(count());
  for (std::size_t i = 0; i < count(); ++i) out.push_back(chunk(i));
  return out;
}

ChunkPlan plan_chunks(std::size_t n_samples, int sample_rate, double chunk_sec,
                      double overlap_sec) {
  if (!(overlap_sec >= 0.0) || !(chunk_sec > overlap_sec)) {
    throw std::invalid_argument("chunking requires chunk_sec > overlap_sec >= 0");
  }
  if (n_samples == 0) throw std::invalid_argument("chunking requires at least one sample");
  if (sample_rate <= 0) throw std::invalid_argument("sample rate must be positive");

  ChunkPlan plan;
  plan.n_samples = n_samples;
  plan.chunk_len = static_cast<std::size_t>(std::llround(chunk_sec * sample_rate));
  plan.overlap_len = static_cast<std::size_t>(std::llround(overlap_sec * sample_rate));
  if (plan.chunk_len <= plan.overlap_len) {
    throw std::invalid_argument("chunk length must exceed overlap after rounding to samples");
  }
  plan.eval_offset = plan.overlap_len;
  const std::size_t hop = plan.chunk_len - plan.overlap_len;
  plan.chunk_starts.push_back(0);
  for (std::size_t start = hop; start + plan.overlap_len < n_samples; start += hop) {
    plan.chunk_starts.push_back(start);
  }
  return plan;
}

std::pair<const AudioBuffer&, const AudioBuffer&> pair_validate(const AudioBuffer& x,
                                                                const AudioBuffer& y) {
  if (x.sample_rate() != y.sample_rate()) {
    throw std::invalid_argument("rate mismatch: " + std::to_string(x.sample_rate()) + " vs " +
                                std::to_string(y.sample_rate()) + " Hz");
  }
  if (x.size() != y.size()) {
    throw std::invalid_argument("length mismatch: " + std::to_string(x.size()) + " vs " +
                                std::to_string(y.size()) + " samples");
  }
  return {x, y};
}

}  // namespace compfit
