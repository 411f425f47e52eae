#include "hedge/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include "hedge/crc32.hpp"
#include "hedge/errors.hpp"

namespace hedge {

std::vector<int> class_digits(uint32_t class_id, int n_digits) {
  std::vector<int> d(n_digits);
  for (int i = n_digits - 1; i >= 0; --i) {
    d[i] = int(class_id % 10);
    class_id /= 10;
  }
  return d;
}

ClassSplit build_class_splits(int n_digits, uint64_t seed,
                              bool require_reference_counts) {
  if (n_digits < 1 || n_digits > 9)
    throw UnsupportedN("n_digits must be in 1..9, got " + std::to_string(n_digits));
  if (require_reference_counts && n_digits != 2 && n_digits != 3)
    throw UnsupportedN("reference class counts exist only for N=2 and N=3");

  uint64_t total = 1;
  for (int i = 0; i < n_digits; ++i) total *= 10;
  uint64_t n_train_classes = (total / 10) * 7;
  uint64_t n_unseen = std::min<uint64_t>(total - n_train_classes, 100);
  uint64_t n_seen = std::min<uint64_t>(n_train_classes, 100);

  std::vector<uint32_t> all(total);
  for (uint64_t c = 0; c < total; ++c) all[c] = uint32_t(c);
  Rng rng(derive_seed(seed, "class-split"));
  rng.shuffle(all);

  ClassSplit split;
  split.n_digits = n_digits;
  split.seed = seed;
  split.training_classes.assign(all.begin(), all.begin() + n_train_classes);
  // unseen test classes: subsample of the held-out remainder
  std::vector<uint32_t> held(all.begin() + n_train_classes, all.end());
  rng.shuffle(held);
  split.unseen_test_classes.assign(held.begin(), held.begin() + n_unseen);
  // seen test classes: subsample of the training classes
  std::vector<uint32_t> seen = split.training_classes;
  rng.shuffle(seen);
  split.seen_test_classes.assign(seen.begin(), seen.begin() + n_seen);

  std::sort(split.training_classes.begin(), split.training_classes.end());
  std::sort(split.unseen_test_classes.begin(), split.unseen_test_classes.end());
  std::sort(split.seen_test_classes.begin(), split.seen_test_classes.end());
  return split;
}

void occlude_digit_with(std::vector<double>& digit, double lw_draw, double lh_draw,
                        uint64_t col0, uint64_t row0, OcclusionRect* rect_out) {
  int w = std::min(int(std::floor(lw_draw)), 28);
  int h = std::min(int(std::floor(lh_draw)), 28);
  if (col0 + w > 28 || row0 + h > 28)
    throw Error("occlusion patch would leave the frame");
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      digit[(row0 + r) * 28 + (col0 + c)] = 0.0;
  if (rect_out) *rect_out = {int(row0), int(col0), h, w};
}

std::vector<double> occlude_digit(const std::vector<double>& digit, Rng& rng,
                                  OcclusionRect* rect_out) {
  if (digit.size() != 784) throw DimMismatch("occlude_digit wants a 28x28 digit");
  double lw = rng.uniform(0.0, 28.0);
  double lh = rng.uniform(0.0, 28.0);
  int w = int(std::floor(lw)), h = int(std::floor(lh));
  uint64_t col0 = rng.uniform_int(uint64_t(28 - w + 1));
  uint64_t row0 = rng.uniform_int(uint64_t(28 - h + 1));
  std::vector<double> out = digit;
  occlude_digit_with(out, lw, lh, col0, row0, rect_out);
  return out;
}

namespace {

// per-digit-class index pools for one RawDigitSet
std::vector<std::vector<uint32_t>> index_by_class(const RawDigitSet& set) {
  std::vector<std::vector<uint32_t>> pools(10);
  for (size_t i = 0; i < set.labels.size(); ++i)
    pools[set.labels[i]].push_back(uint32_t(i));
  return pools;
}

// near-uniform allocation: floor(total/k) per class, remainder goes to a
// seeded random subset of classes
std::vector<int64_t> allocate(const std::vector<uint32_t>& classes, int64_t total,
                              Rng& rng) {
  int64_t k = int64_t(classes.size());
  std::vector<int64_t> counts(k, total / k);
  std::vector<uint32_t> order(k);
  for (int64_t i = 0; i < k; ++i) order[i] = uint32_t(i);
  rng.shuffle(order);
  for (int64_t i = 0; i < total % k; ++i) counts[order[i]] += 1;
  return counts;
}

void blit_digit(NDigitImage& img, int slot, const std::vector<double>& digit,
                int n_digits) {
  int width = 28 * n_digits;
  for (int r = 0; r < 28; ++r)
    for (int c = 0; c < 28; ++c)
      img.pixels[r * width + slot * 28 + c] =
          uint8_t(std::lround(digit[r * 28 + c] * 255.0));
}

}  // namespace

NDigitDataset synthesize(const RawDigitSet& raw_train, const RawDigitSet& raw_test,
                         const ClassSplit& split, double occlusion_prob,
                         uint64_t seed, int64_t n_train, int64_t n_test,
                         std::vector<OcclusionRect>* rects_out) {
  if (occlusion_prob < 0.0 || occlusion_prob > 1.0)
    throw ConfigError("occlusion_prob must be in [0,1]");
  const int n = split.n_digits;
  const int width = 28 * n;

  auto train_pools = index_by_class(raw_train);
  auto test_pools = index_by_class(raw_test);
  auto check_pools = [&](const std::vector<std::vector<uint32_t>>& pools,
                         const std::vector<uint32_t>& classes, const char* tag) {
    for (uint32_t cid : classes)
      for (int d : class_digits(cid, n))
        if (pools[d].empty())
          throw InsufficientDigits("no '" + std::to_string(d) + "' digits in the " +
                                   tag + " pool");
  };
  check_pools(train_pools, split.training_classes, "train");

  NDigitDataset ds;
  ds.split = split;
  ds.occlusion_prob = occlusion_prob;

  Rng rng(derive_seed(seed, "synthesize"));

  // --- training set ---
  auto train_counts = allocate(split.training_classes, n_train, rng);
  ds.train.reserve(n_train);
  for (size_t ci = 0; ci < split.training_classes.size(); ++ci) {
    uint32_t cid = split.training_classes[ci];
    auto digits = class_digits(cid, n);
    for (int64_t i = 0; i < train_counts[ci]; ++i) {
      NDigitImage img;
      img.class_id = cid;
      img.pixels.assign(size_t(28) * width, 0);
      img.provenance.resize(n);
      for (int slot = 0; slot < n; ++slot) {
        const auto& pool = train_pools[digits[slot]];
        uint32_t src = pool[rng.uniform_int(pool.size())];
        img.provenance[slot] = src;
        bool occlude = rng.uniform() < occlusion_prob;
        if (occlude) {
          img.corrupted_mask |= uint8_t(1u << slot);
          OcclusionRect rect;
          auto patched = occlude_digit(raw_train.images[src], rng, &rect);
          blit_digit(img, slot, patched, n);
          if (rects_out) rects_out->push_back(rect);
        } else {
          blit_digit(img, slot, raw_train.images[src], n);
        }
      }
      ds.train.push_back(std::move(img));
    }
  }

  // --- test twins ---
  std::vector<uint32_t> test_classes = split.seen_test_classes;
  test_classes.insert(test_classes.end(), split.unseen_test_classes.begin(),
                      split.unseen_test_classes.end());
  std::sort(test_classes.begin(), test_classes.end());
  test_classes.erase(std::unique(test_classes.begin(), test_classes.end()),
                     test_classes.end());
  check_pools(test_pools, test_classes, "test");

  auto test_counts = allocate(test_classes, n_test, rng);
  ds.test_clean.reserve(n_test);
  ds.test_corrupt.reserve(n_test);
  for (size_t ci = 0; ci < test_classes.size(); ++ci) {
    uint32_t cid = test_classes[ci];
    auto digits = class_digits(cid, n);
    for (int64_t i = 0; i < test_counts[ci]; ++i) {
      NDigitImage clean;
      clean.class_id = cid;
      clean.pixels.assign(size_t(28) * width, 0);
      clean.provenance.resize(n);
      for (int slot = 0; slot < n; ++slot) {
        const auto& pool = test_pools[digits[slot]];
        uint32_t src = pool[rng.uniform_int(pool.size())];
        clean.provenance[slot] = src;
        blit_digit(clean, slot, raw_test.images[src], n);
      }
      NDigitImage corrupt = clean;
      for (int slot = 0; slot < n; ++slot) {
        corrupt.corrupted_mask |= uint8_t(1u << slot);
        OcclusionRect rect;
        auto patched =
            occlude_digit(raw_test.images[corrupt.provenance[slot]], rng, &rect);
        blit_digit(corrupt, slot, patched, n);
        if (rects_out) rects_out->push_back(rect);
      }
      ds.test_clean.push_back(std::move(clean));
      ds.test_corrupt.push_back(std::move(corrupt));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// NDMN file format

namespace {

constexpr uint16_t kFormatVersion = 1;

struct Writer {
  FILE* f;
  Crc32 crc;
  void bytes(const void* p, size_t len) {
    crc.update(p, len);
    if (len && std::fwrite(p, 1, len, f) != len) throw IoFailure("short write");
  }
  template <typename T>
  void pod(T v) {  // little-endian host assumed (x86); format is LE
    bytes(&v, sizeof v);
  }
};

struct Reader {
  const uint8_t* p;
  size_t len, off = 0;
  void bytes(void* out, size_t n) {
    if (off + n > len) throw IoFailure("record runs past end of file");
    std::memcpy(out, p + off, n);
    off += n;
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof v);
    return v;
  }
};

void write_image(Writer& w, const NDigitImage& img, int n_digits, size_t n_px) {
  w.pod<uint32_t>(img.class_id);
  w.pod<uint8_t>(img.corrupted_mask);
  for (int i = 0; i < n_digits; ++i) w.pod<uint32_t>(img.provenance[i]);
  if (img.pixels.size() != n_px) throw Error("image pixel count mismatch");
  w.bytes(img.pixels.data(), n_px);
}

NDigitImage read_image(Reader& r, int n_digits, size_t n_px) {
  NDigitImage img;
  img.class_id = r.pod<uint32_t>();
  img.corrupted_mask = r.pod<uint8_t>();
  img.provenance.resize(n_digits);
  for (int i = 0; i < n_digits; ++i) img.provenance[i] = r.pod<uint32_t>();
  img.pixels.resize(n_px);
  r.bytes(img.pixels.data(), n_px);
  return img;
}

}  // namespace

void write_dataset(const NDigitDataset& ds, const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.c_str(), "wb"), std::fclose);
  if (!f) throw IoFailure("cannot open " + path + " for writing");
  Writer w{f.get(), {}};

  const int n = ds.split.n_digits;
  const size_t n_px = size_t(28) * 28 * n;
  w.bytes("NDMN", 4);
  w.pod<uint16_t>(kFormatVersion);
  w.pod<uint8_t>(uint8_t(n));
  w.pod<uint8_t>(0);  // reserved
  w.pod<uint32_t>(uint32_t(ds.split.training_classes.size()));
  w.pod<uint32_t>(uint32_t(ds.split.unseen_test_classes.size()));
  w.pod<uint32_t>(uint32_t(ds.split.seen_test_classes.size()));
  w.pod<uint64_t>(uint64_t(ds.train.size()));
  w.pod<uint64_t>(uint64_t(ds.test_clean.size()));
  w.pod<uint64_t>(ds.split.seed);
  w.pod<double>(ds.occlusion_prob);
  for (uint32_t c : ds.split.training_classes) w.pod<uint32_t>(c);
  for (uint32_t c : ds.split.unseen_test_classes) w.pod<uint32_t>(c);
  for (uint32_t c : ds.split.seen_test_classes) w.pod<uint32_t>(c);
  for (const auto& img : ds.train) write_image(w, img, n, n_px);
  for (const auto& img : ds.test_clean) write_image(w, img, n, n_px);
  for (const auto& img : ds.test_corrupt) write_image(w, img, n, n_px);

  uint32_t crc = w.crc.value();
  if (std::fwrite(&crc, 1, 4, f.get()) != 4) throw IoFailure("short write");
  if (std::fflush(f.get()) != 0) throw IoFailure("flush failed on " + path);
}

NDigitDataset read_dataset(const std::string& path) {
  auto bytes = read_file_bytes(path);
  if (bytes.size() < 8) throw IoFailure(path + " is not an NDMN dataset (too small)");
  if (std::memcmp(bytes.data(), "NDMN", 4) != 0)
    throw FormatVersionMismatch(path + " lacks the NDMN magic");
  uint16_t version;
  std::memcpy(&version, bytes.data() + 4, 2);
  if (version != kFormatVersion)
    throw FormatVersionMismatch("file version " + std::to_string(version) +
                                ", supported " + std::to_string(kFormatVersion));

  uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  if (crc32(bytes.data(), bytes.size() - 4) != stored_crc)
    throw ChecksumMismatch(path + " is corrupt or truncated");

  Reader r{bytes.data(), bytes.size() - 4, 6};
  NDigitDataset ds;
  ds.split.n_digits = r.pod<uint8_t>();
  r.pod<uint8_t>();  // reserved
  uint32_t n_tc = r.pod<uint32_t>();
  uint32_t n_uc = r.pod<uint32_t>();
  uint32_t n_sc = r.pod<uint32_t>();
  uint64_t n_train = r.pod<uint64_t>();
  uint64_t n_test = r.pod<uint64_t>();
  ds.split.seed = r.pod<uint64_t>();
  ds.occlusion_prob = r.pod<double>();
  const int n = ds.split.n_digits;
  const size_t n_px = size_t(28) * 28 * n;
  ds.split.training_classes.resize(n_tc);
  for (auto& c : ds.split.training_classes) c = r.pod<uint32_t>();
  ds.split.unseen_test_classes.resize(n_uc);
  for (auto& c : ds.split.unseen_test_classes) c = r.pod<uint32_t>();
  ds.split.seen_test_classes.resize(n_sc);
  for (auto& c : ds.split.seen_test_classes) c = r.pod<uint32_t>();
  ds.train.reserve(n_train);
  for (uint64_t i = 0; i < n_train; ++i) ds.train.push_back(read_image(r, n, n_px));
  ds.test_clean.reserve(n_test);
  for (uint64_t i = 0; i < n_test; ++i)
    ds.test_clean.push_back(read_image(r, n, n_px));
  ds.test_corrupt.reserve(n_test);
  for (uint64_t i = 0; i < n_test; ++i)
    ds.test_corrupt.push_back(read_image(r, n, n_px));
  if (r.off != r.len) throw ChecksumMismatch(path + " has trailing bytes");
  return ds;
}

Array pixels_to_array(const std::vector<NDigitImage>& images,
                      const std::vector<int64_t>& idx, int n_digits) {
  const int64_t n_px = int64_t{28} * 28 * n_digits;
  Array out({int64_t(idx.size()), 1, 28, int64_t{28} * n_digits});
  double* dst = out.data.data();
  for (int64_t i : idx) {
    const NDigitImage& img = images.at(size_t(i));
    if (int64_t(img.pixels.size()) != n_px)
      throw DimMismatch("image has " + std::to_string(img.pixels.size()) +
                        " pixels, want " + std::to_string(n_px));
    for (int64_t p = 0; p < n_px; ++p) dst[p] = img.pixels[size_t(p)] / 255.0;
    dst += n_px;
  }
  return out;
}

Array pixels_to_array(const std::vector<NDigitImage>& images, int n_digits) {
  std::vector<int64_t> idx(images.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = int64_t(i);
  return pixels_to_array(images, idx, n_digits);
}

}  // namespace hedge
