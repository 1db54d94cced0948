#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "parformer/tensor.hpp"

namespace parformer {

struct ImageBatch {
  Tensor images;            // [B x C x S x S], values in [0,1]
  std::vector<int> labels;  // B entries
};

/// Fixed-size labeled images stored as raw bytes. File layout: magic line,
/// u32 count/channels/height/width, count*C*H*W pixel bytes, count label
/// bytes.
class ImageDataset {
 public:
  int count = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<uint8_t> pixels;
  std::vector<uint8_t> labels;

  /// Class c fills each patch cell with a per-(class, cell, channel) constant
  /// drawn once from the seed; samples add small pixel noise. Labels cycle
  /// 0..classes-1, so any prefix of full cycles is balanced.
  static ImageDataset synthetic_patterned(int count, int channels, int image_size,
                                          int patch_size, int num_classes, uint64_t seed);

  static ImageDataset load(const std::string& path);
  void save(const std::string& path) const;

  /// Gathers the given samples into one [B x C x H x W] f64 batch (pixels
  /// scaled by 1/255).
  ImageBatch batch(const std::vector<int>& indices) const;
};

/// Byte-level corpus for the character LM.
class TextDataset {
 public:
  std::vector<uint8_t> bytes;

  static TextDataset from_file(const std::string& path);
  static TextDataset from_string(const std::string& text);
  /// The pattern repeated until the corpus holds at least min_bytes.
  static TextDataset repeated(const std::string& pattern, size_t min_bytes);

  /// length+1 consecutive byte ids starting at offset (inputs plus the
  /// shifted-by-one targets).
  std::vector<int> window(size_t offset, int length) const;
  size_t size() const { return bytes.size(); }
};

}  // namespace parformer
