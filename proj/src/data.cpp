#include "parformer/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "parformer/rng.hpp"

namespace parformer {

namespace {

constexpr char kMagic[] = "parformer-img-v1\n";
constexpr size_t kMagicLen = sizeof(kMagic) - 1;

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("image file truncated");
  return v;
}

}  // namespace

ImageDataset ImageDataset::synthetic_patterned(int count, int channels, int image_size,
                                               int patch_size, int num_classes, uint64_t seed) {
  if (count < 1 || channels < 1 || image_size < 1 || patch_size < 1 ||
      image_size % patch_size != 0 || num_classes < 2 || num_classes > 256)
    throw std::invalid_argument("synthetic_patterned: bad geometry");

  const int side = image_size / patch_size;
  // One intensity per (class, channel, patch cell), fixed by the seed.
  std::mt19937_64 tmpl_rng(mix_seed(seed, 0x74656d70, 0));
  std::vector<double> templates(static_cast<size_t>(num_classes) * channels * side * side);
  for (double& v : templates) v = uniform01(tmpl_rng);

  ImageDataset ds;
  ds.count = count;
  ds.channels = channels;
  ds.height = image_size;
  ds.width = image_size;
  ds.pixels.resize(static_cast<size_t>(count) * channels * image_size * image_size);
  ds.labels.resize(static_cast<size_t>(count));

  std::mt19937_64 noise_rng(mix_seed(seed, 0x6e6f6973, 0));
  size_t at = 0;
  for (int i = 0; i < count; ++i) {
    const int label = i % num_classes;
    ds.labels[static_cast<size_t>(i)] = static_cast<uint8_t>(label);
    for (int c = 0; c < channels; ++c)
      for (int y = 0; y < image_size; ++y)
        for (int x = 0; x < image_size; ++x) {
          const int cell = (y / patch_size) * side + (x / patch_size);
          const double base =
              templates[static_cast<size_t>((label * channels + c) * side * side + cell)];
          const double noisy = base + 0.1 * (uniform01(noise_rng) - 0.5);
          const double clamped = std::min(1.0, std::max(0.0, noisy));
          ds.pixels[at++] = static_cast<uint8_t>(clamped * 255.0 + 0.5);
        }
  }
  return ds;
}

void ImageDataset::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open image file for writing: " + path);
  os.write(kMagic, static_cast<std::streamsize>(kMagicLen));
  write_u32(os, static_cast<uint32_t>(count));
  write_u32(os, static_cast<uint32_t>(channels));
  write_u32(os, static_cast<uint32_t>(height));
  write_u32(os, static_cast<uint32_t>(width));
  os.write(reinterpret_cast<const char*>(pixels.data()),
           static_cast<std::streamsize>(pixels.size()));
  os.write(reinterpret_cast<const char*>(labels.data()),
           static_cast<std::streamsize>(labels.size()));
  if (!os) throw std::runtime_error("image file write failed: " + path);
}

ImageDataset ImageDataset::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open image file: " + path);
  char magic[kMagicLen];
  is.read(magic, static_cast<std::streamsize>(kMagicLen));
  if (!is || std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw std::runtime_error("not an image dataset file: " + path);
  ImageDataset ds;
  ds.count = static_cast<int>(read_u32(is));
  ds.channels = static_cast<int>(read_u32(is));
  ds.height = static_cast<int>(read_u32(is));
  ds.width = static_cast<int>(read_u32(is));
  const size_t n = static_cast<size_t>(ds.count) * ds.channels * ds.height * ds.width;
  ds.pixels.resize(n);
  is.read(reinterpret_cast<char*>(ds.pixels.data()), static_cast<std::streamsize>(n));
  ds.labels.resize(static_cast<size_t>(ds.count));
  is.read(reinterpret_cast<char*>(ds.labels.data()), static_cast<std::streamsize>(ds.count));
  if (!is) throw std::runtime_error("image file truncated: " + path);
  return ds;
}

ImageBatch ImageDataset::batch(const std::vector<int>& indices) const {
  const size_t per = static_cast<size_t>(channels) * height * width;
  std::vector<double> out(indices.size() * per);
  std::vector<int> lab(indices.size());
  for (size_t b = 0; b < indices.size(); ++b) {
    const int i = indices[b];
    if (i < 0 || i >= count) throw std::out_of_range("image index out of range");
    const uint8_t* src = pixels.data() + static_cast<size_t>(i) * per;
    for (size_t j = 0; j < per; ++j) out[b * per + j] = static_cast<double>(src[j]) / 255.0;
    lab[b] = labels[static_cast<size_t>(i)];
  }
  return ImageBatch{
      Tensor::from_data({static_cast<int64_t>(indices.size()), channels, height, width},
                        std::move(out)),
      std::move(lab)};
}

TextDataset TextDataset::from_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open text file: " + path);
  TextDataset ds;
  ds.bytes.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  if (ds.bytes.empty()) throw std::runtime_error("text corpus is empty: " + path);
  return ds;
}

TextDataset TextDataset::from_string(const std::string& text) {
  if (text.empty()) throw std::invalid_argument("text corpus is empty");
  TextDataset ds;
  ds.bytes.assign(text.begin(), text.end());
  return ds;
}

TextDataset TextDataset::repeated(const std::string& pattern, size_t min_bytes) {
  if (pattern.empty()) throw std::invalid_argument("empty pattern");
  TextDataset ds;
  while (ds.bytes.size() < min_bytes) ds.bytes.insert(ds.bytes.end(), pattern.begin(), pattern.end());
  return ds;
}

std::vector<int> TextDataset::window(size_t offset, int length) const {
  if (length < 1 || offset + static_cast<size_t>(length) + 1 > bytes.size())
    throw std::out_of_range("text window out of range");
  std::vector<int> ids(static_cast<size_t>(length) + 1);
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(bytes[offset + i]);
  return ids;
}

}  // namespace parformer
