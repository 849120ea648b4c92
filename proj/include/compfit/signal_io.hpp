#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace compfit {

/// Mono audio at full scale +/-1.0, held in double precision.
class AudioBuffer {
 public:
  /// Throws std::invalid_argument if the buffer is empty, the rate is not
  /// positive, or any sample is non-finite.
  AudioBuffer(std::vector<double> samples, int sample_rate);

  std::span<const double> samples() const { return samples_; }
  const std::vector<double>& vector() const { return samples_; }
  int sample_rate() const { return sample_rate_; }
  std::size_t size() const { return samples_.size(); }
  double operator[](std::size_t i) const { return samples_[i]; }

  friend bool operator==(const AudioBuffer&, const AudioBuffer&) = default;

 private:
  std::vector<double> samples_;
  int sample_rate_;
};

/// Raised for unreadable or unsupported audio files.
class AudioFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SampleFormat { Pcm16, Pcm24, Float32, Float64 };

/// Reads a mono RIFF/WAVE file (PCM16, PCM24, IEEE float32 or float64).
AudioBuffer load_wav(const std::filesystem::path& path);

/// Writes a mono RIFF/WAVE file. PCM formats clip to [-1, 1].
void save_wav(const std::filesystem::path& path, const AudioBuffer& buffer,
              SampleFormat format = SampleFormat::Float32);

/// Rounds every sample to what `format` can store, so data generated in
/// memory matches what a later load_wav returns.
AudioBuffer quantize(const AudioBuffer& buffer, SampleFormat format);

SampleFormat parse_sample_format(const std::string& name);
std::string to_string(SampleFormat format);

/// One processing chunk: samples [begin, end) are run through the model and
/// samples [eval_begin, end) enter the loss.
struct Chunk {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t eval_begin = 0;

  std::size_t size() const { return end - begin; }
  /// Offset of the evaluation region inside the chunk.
  std::size_t eval_offset() const { return eval_begin - begin; }
};

/// Overlapping split of a signal. The overlap at the head of every chunk but
/// the first is warm-up only; the first chunk evaluates from sample 0.
struct ChunkPlan {
  std::size_t n_samples = 0;
  std::size_t chunk_len = 0;
  std::size_t overlap_len = 0;
  std::size_t eval_offset = 0;
  std::vector<std::size_t> chunk_starts;

  std::size_t count() const { return chunk_starts.size(); }
  Chunk chunk(std::size_t i) const;
  std::vector<Chunk> chunks() const;
};

ChunkPlan plan_chunks(std::size_t n_samples, int sample_rate, double chunk_sec = 12.0,
                      double overlap_sec = 1.0);

/// Throws std::invalid_argument on rate or length mismatch; no resampling.
std::pair<const AudioBuffer&, const AudioBuffer&> pair_validate(const AudioBuffer& x,
                                                                const AudioBuffer& y);

}  // namespace compfit
