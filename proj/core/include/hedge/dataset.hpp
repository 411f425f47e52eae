#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "hedge/array.hpp"
#include "hedge/idx.hpp"
#include "hedge/rng.hpp"

namespace hedge {

// Which N-digit class ids train / test splits get. Class id is the integer
// value of the digit string ("07" -> 7; N is carried separately).
struct ClassSplit {
  int n_digits = 2;
  uint64_t seed = 0;
  std::vector<uint32_t> training_classes;
  std::vector<uint32_t> unseen_test_classes;  // disjoint from training
  std::vector<uint32_t> seen_test_classes;    // subset of training
};

// A composed image. Pixels are stored quantized (u8, value/255 gives the
// [0,1] pixel) because a 100k-image set at double would be ~1.2 GB for no
// numeric benefit: sources arrived as bytes and the file format stores bytes.
struct NDigitImage {
  std::vector<uint8_t> pixels;      // 28 rows x 28*N cols, row-major
  uint32_t class_id = 0;
  uint8_t corrupted_mask = 0;       // bit i set = digit slot i got a patch
  std::vector<uint32_t> provenance; // index of each source digit in its pool

  bool digit_occluded(int i) const { return (corrupted_mask >> i) & 1; }
};

struct NDigitDataset {
  ClassSplit split;
  double occlusion_prob = 0.2;
  std::vector<NDigitImage> train;        // digits from the train pool
  std::vector<NDigitImage> test_clean;   // digits from the test pool, no patches
  std::vector<NDigitImage> test_corrupt; // same digits, every slot patched

  int n_digits() const { return split.n_digits; }
  int width() const { return 28 * split.n_digits; }
};

// Occlusion patch geometry, exposed so tests can diff pixels against it.
struct OcclusionRect {
  int row0 = 0, col0 = 0, h = 0, w = 0;  // h or w of 0 = empty patch
};

// Class splits per the reference counts: N=2 -> 70 train / 30 unseen / 70
// seen; N=3 -> 700 / 100 / 100. Other N use the same proportional rule
// (train 7*10^(N-1), unseen & seen capped at 100) unless
// require_reference_counts is set, in which case N outside {2,3} raises
// UnsupportedN. Deterministic in (n_digits, seed).
ClassSplit build_class_splits(int n_digits, uint64_t seed,
                              bool require_reference_counts = false);

// Black rectangular patch: side lengths floor(Unif(0,28)), top-left corner
// uniform over placements that keep the patch inside the frame. The _with
// variant takes the raw draws so edge cases (zero/full patch) are reachable
// in tests; occlude_digit samples them from rng in the order
// (width draw, height draw, col0, row0).
void occlude_digit_with(std::vector<double>& digit, double lw_draw, double lh_draw,
                        uint64_t col0, uint64_t row0, OcclusionRect* rect_out = nullptr);
std::vector<double> occlude_digit(const std::vector<double>& digit, Rng& rng,
                                  OcclusionRect* rect_out = nullptr);

// Compose the full dataset: train images draw digits from raw_train with
// per-digit occlusion probability occlusion_prob; the clean/corrupt test
// twins draw the same digits from raw_test, with no patches and all-slot
// patches respectively. Images are allocated near-uniformly across the
// split's classes (floor(count/classes) each, remainder spread by shuffled
// class order). rects_out, when given, receives the patch geometry of every
// applied occlusion in application order (train first, then test_corrupt).
NDigitDataset synthesize(const RawDigitSet& raw_train, const RawDigitSet& raw_test,
                         const ClassSplit& split, double occlusion_prob,
                         uint64_t seed, int64_t n_train = 100000,
                         int64_t n_test = 10000,
                         std::vector<OcclusionRect>* rects_out = nullptr);

// NDMN container: "NDMN" magic, u16 LE version, header (N, counts, seed,
// occlusion_prob), class lists, per-image records (class_id u32, mask u8,
// provenance u32*N, pixels u8), trailing CRC-32 over everything before it.
void write_dataset(const NDigitDataset& ds, const std::string& path);
NDigitDataset read_dataset(const std::string& path);

// Decimal digits of a class id, most significant first, padded to n digits.
std::vector<int> class_digits(uint32_t class_id, int n_digits);

// Pack images into the [n,1,28,28N] layout the encoder eats, pixels in [0,1].
// The indexed variant gathers images[idx[0]], images[idx[1]], ...
Array pixels_to_array(const std::vector<NDigitImage>& images, int n_digits);
Array pixels_to_array(const std::vector<NDigitImage>& images,
                      const std::vector<int64_t>& idx, int n_digits);

}  // namespace hedge
