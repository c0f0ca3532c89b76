#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "sploss/datasets.hpp"
#include "sploss/idx.hpp"
#include "support/oracles.hpp"

using namespace sploss;
namespace fs = std::filesystem;

namespace {

using Points = std::vector<std::pair<double, double>>;

std::pair<Points, Points> by_class(const Dataset& ds) {
  Points a, b;
  for (std::size_t i = 0; i < ds.size(); ++i)
    (ds.labels[i] == 0 ? a : b).emplace_back(ds.features(i, 0), ds.features(i, 1));
  return {a, b};
}

void expect_same(const Dataset& a, const Dataset& b) {
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.num_classes, b.num_classes);
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("sploss_ds_" + name); }

const fs::path kMnistImages = fs::path(SPLOSS_DATA_DIR) / "mnist10k" / "images-idx3-ubyte.gz";
const fs::path kMnistLabels = fs::path(SPLOSS_DATA_DIR) / "mnist10k" / "labels-idx1-ubyte.gz";

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> be32(std::uint32_t v) {
  return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 8),
          static_cast<unsigned char>(v)};
}

std::vector<unsigned char> idx_images(std::uint32_t n, std::uint32_t h, std::uint32_t w,
                                      const std::vector<unsigned char>& px) {
  std::vector<unsigned char> out;
  for (auto v : {kIdxImageMagic, n, h, w}) {
    const auto b = be32(v);
    out.insert(out.end(), b.begin(), b.end());
  }
  out.insert(out.end(), px.begin(), px.end());
  return out;
}

std::vector<unsigned char> idx_labels(std::uint32_t n, const std::vector<unsigned char>& labels) {
  std::vector<unsigned char> out;
  for (auto v : {kIdxLabelMagic, n}) {
    const auto b = be32(v);
    out.insert(out.end(), b.begin(), b.end());
  }
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

}  // namespace

TEST(Segments, ExactGeometryWithoutNoise) {
  const Dataset ds = gen_segments({ToyKind::segments, 50, 1.8, 0.0, 0.0, 1, 3});
  ASSERT_EQ(ds.size(), 100u);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(ds.features(i, 1), ds.labels[i] == 0 ? -0.9 : 0.9);
    EXPECT_GE(ds.features(i, 0), -2.0);
    EXPECT_LE(ds.features(i, 0), 2.0);
  }
  ds.validate();
}

TEST(Segments, SinglePointPerClassMidline) {
  const Dataset ds = gen_segments({ToyKind::segments, 1, 1.8, 0.0, 0.0, 1, 0});
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.features(1, 1) - ds.features(0, 1), 1.8);
  EXPECT_EQ(0.5 * (ds.features(0, 1) + ds.features(1, 1)), 0.0);
}

TEST(Segments, LinearlySeparableWithMargin) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto [a, b] = by_class(gen_segments({ToyKind::segments, 25, 1.8, 0.0, 0.0, 1, seed}));
    EXPECT_GE(oracle::best_linear_gap_2d(a, b), 1.8 - 1e-12);
    EXPECT_LE(oracle::max_gap_lower_bound_2d(a, b), 1.8 + 1e-12);
  }
}

TEST(Segments, NoisyMarginBoundedByRealizedDeviation) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const double noise = 0.05;
    const Dataset ds = gen_segments({ToyKind::segments, 25, 1.8, noise, 0.0, 1, seed});
    const auto [a, b] = by_class(ds);
    double dev0 = 0.0, dev1 = 0.0;
    for (const auto& p : a) dev0 = std::max(dev0, p.second + 0.9);
    for (const auto& p : b) dev1 = std::max(dev1, 0.9 - p.second);
    EXPECT_GE(oracle::best_linear_gap_2d(a, b), 1.8 - dev0 - dev1 - 1e-12);
    EXPECT_GT(oracle::best_linear_gap_2d(a, b), 0.0);
  }
}

TEST(Segments, BitwiseReproducible) {
  const ToySpec spec{ToyKind::segments, 40, 1.8, 0.1, 0.0, 1, 9};
  expect_same(gen_segments(spec), gen_segments(spec));
  ToySpec other = spec;
  other.seed = 10;
  EXPECT_NE(gen_segments(spec).features, gen_segments(other).features);
}

TEST(Segments, Errors) {
  EXPECT_THROW(gen_segments({ToyKind::segments, 0, 1.8}), InvalidArgument);
  EXPECT_THROW(gen_segments({ToyKind::segments, 10, 0.0}), InvalidArgument);
  EXPECT_THROW(gen_segments({ToyKind::segments, 10, 1.8, -0.1}), InvalidArgument);
}

TEST(TwoMoons, OverlappingMarginIsInseparable) {
  // a 0.01 overlap only shows once the sampled arcs reach close to the moon tips
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto [a, b] = by_class(gen_two_moons({ToyKind::two_moons, 1500, -0.01, 0.0, 0.0, 1, seed}));
    EXPECT_TRUE(oracle::hulls_overlap_2d(a, b));
    EXPECT_LT(oracle::max_gap_lower_bound_2d(a, b, 4000), 0.0);
  }
  // a positive margin pulls the moons apart
  const auto [a, b] = by_class(gen_two_moons({ToyKind::two_moons, 200, 0.3, 0.0, 0.0, 1, 1}));
  EXPECT_FALSE(oracle::hulls_overlap_2d(a, b));
  // the tips of the lower moon sit inside the hull of the upper one
  const Points upper = {{1.0, 0.0}, {-1.0, 0.0}, {0.0, 1.0}};
  const Points tips = {{0.0, 0.01}, {2.0, 0.01}, {1.0, -0.99}};
  EXPECT_LT(oracle::best_linear_gap_2d(upper, tips), 0.0);
  EXPECT_TRUE(oracle::hulls_overlap_2d(upper, tips));
}

TEST(TwoMoons, NoiselessPointsOnHalfCircles) {
  const double margin = -0.01;
  const Dataset ds = gen_two_moons({ToyKind::two_moons, 60, margin, 0.0, 0.0, 1, 2});
  EXPECT_EQ(ds.class_counts(), (std::vector<std::size_t>{60, 60}));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double x = ds.features(i, 0);
    const double y = ds.features(i, 1);
    if (ds.labels[i] == 0) {
      EXPECT_NEAR(x * x + y * y, 1.0, 1e-14);
      EXPECT_GE(y, 0.0);
    } else {
      EXPECT_NEAR((x - 1.0) * (x - 1.0) + (y + margin) * (y + margin), 1.0, 1e-14);
      EXPECT_LE(y, -margin);
    }
  }
}

TEST(TwoCircles, BalancedAndDropCounts) {
  const Dataset full = gen_two_circles({ToyKind::two_circles, 100, 0.0, 0.0, 0.0, 1, 1});
  EXPECT_EQ(full.class_counts(), (std::vector<std::size_t>{100, 100}));
  const Dataset sparse = gen_two_circles({ToyKind::two_circles, 1000, 0.0, 0.0, 0.97, 1, 1});
  EXPECT_EQ(sparse.class_counts(), (std::vector<std::size_t>{1000, 30}));
  const std::pair<double, std::size_t> sweep[] = {{0.1, 900}, {0.3, 700}, {0.5, 500}, {0.9, 100}};
  for (const auto& [drop, left] : sweep)
    EXPECT_EQ(gen_two_circles({ToyKind::two_circles, 1000, 0.0, 0.0, drop, 1, 4}).class_counts()[1], left);
  const Dataset inner_drop = gen_two_circles({ToyKind::two_circles, 100, 0.0, 0.0, 0.5, 0, 1});
  EXPECT_EQ(inner_drop.class_counts(), (std::vector<std::size_t>{50, 100}));
}

TEST(TwoCircles, Radii) {
  const Dataset ds = gen_two_circles({ToyKind::two_circles, 50, 0.0, 0.0, 0.0, 1, 8});
  for (std::size_t i = 0; i < ds.size(); ++i)
    EXPECT_NEAR(std::hypot(ds.features(i, 0), ds.features(i, 1)), ds.labels[i] == 0 ? 1.0 : 1.5, 1e-14);
}

TEST(TwoCircles, Errors) {
  EXPECT_THROW(gen_two_circles({ToyKind::two_circles, 10, 0.0, 0.0, 0.99, 1, 1}), InvalidArgument);
  EXPECT_THROW(gen_two_circles({ToyKind::two_circles, 10, 0.0, 0.0, 1.0, 1, 1}), InvalidArgument);
  EXPECT_THROW(gen_two_circles({ToyKind::two_circles, 10, 0.0, 0.0, -0.1, 1, 1}), InvalidArgument);
  EXPECT_THROW(gen_two_circles({ToyKind::two_circles, 10, 0.0, 0.0, 0.5, 2, 1}), InvalidArgument);
}

TEST(Generate, FeatureRangeBracketsData) {
  for (auto kind : {ToyKind::segments, ToyKind::two_moons, ToyKind::two_circles}) {
    const Dataset ds = generate({kind, 30, kind == ToyKind::two_moons ? -0.01 : 1.8, 0.1, 0.0, 1, 5});
    EXPECT_NO_THROW(ds.validate());
    EXPECT_EQ(ds.num_classes, 2);
  }
}

TEST(Split, EightyTwenty) {
  const Dataset ds = gen_segments({ToyKind::segments, 50, 1.8, 0.0, 0.0, 1, 3});
  const Split s = train_test_split(ds, 0.8, 11);
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(s.test.size(), 20u);
  const Split again = train_test_split(ds, 0.8, 11);
  expect_same(s.train, again.train);
  EXPECT_THROW(train_test_split(ds, 0.0, 1), InvalidArgument);
  EXPECT_THROW(train_test_split(ds, 1.5, 1), InvalidArgument);
}

TEST(Subsample, IdentityDeterminismAndErrors) {
  const Dataset ds = gen_two_circles({ToyKind::two_circles, 40, 0.0, 0.05, 0.25, 1, 3});
  const auto counts = ds.class_counts();
  expect_same(subsample(ds, counts, 5), ds);
  const Dataset a = subsample(ds, 10, 5);
  expect_same(a, subsample(ds, 10, 5));
  EXPECT_EQ(a.class_counts(), (std::vector<std::size_t>{10, 10}));
  EXPECT_NE(a.features, subsample(ds, 10, 6).features);
  EXPECT_THROW(subsample(ds, 31, 5), InvalidArgument);
  const std::vector<std::size_t> wrong_len = {1};
  EXPECT_THROW(subsample(ds, wrong_len, 5), InvalidArgument);
}

TEST(Csv, RoundTrip) {
  const Dataset ds = gen_two_moons({ToyKind::two_moons, 20, -0.01, 0.1, 0.0, 1, 3});
  const auto path = temp_path("moons.csv");
  write_dataset_csv(ds, path);
  {
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "x0,x1,label");
  }
  expect_same(read_dataset_csv(path), ds);
  fs::remove(path);
}

TEST(Csv, Malformed) {
  const auto path = temp_path("bad.csv");
  {
    std::ofstream(path) << "x0,x1,label\n1.0,2.0,0\n1.0,abc,1\n";
  }
  EXPECT_THROW(read_dataset_csv(path), ParseError);
  {
    std::ofstream(path) << "x0,x1,label\n1.0,0\n";
  }
  EXPECT_THROW(read_dataset_csv(path), ParseError);
  {
    std::ofstream(path) << "x0,x1,y\n1.0,2.0,0\n";
  }
  EXPECT_THROW(read_dataset_csv(path), ParseError);
  fs::remove(path);
  EXPECT_THROW(read_dataset_csv(temp_path("missing.csv")), ParseError);
}

TEST(Idx, SmallFilesAndScaling) {
  const auto img = temp_path("img.idx");
  const auto lab = temp_path("lab.idx");
  write_bytes(img, idx_images(2, 1, 3, {0, 128, 255, 255, 0, 51}));
  write_bytes(lab, idx_labels(2, {3, 1}));
  const Dataset ds = load_idx(img, lab);
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.dim(), 3u);
  EXPECT_EQ(ds.num_classes, 4);
  EXPECT_EQ(ds.features(0, 2), 1.0);
  EXPECT_EQ(ds.features(0, 0), 0.0);
  EXPECT_EQ(ds.features(1, 2), 0.2);
  EXPECT_EQ(ds.labels, (std::vector<int>{3, 1}));
  EXPECT_EQ(ds.feature_range[1], (std::pair<double, double>{0.0, 1.0}));
  fs::remove(img);
  fs::remove(lab);
}

TEST(Idx, Errors) {
  const auto img = temp_path("img_e.idx");
  const auto lab = temp_path("lab_e.idx");
  write_bytes(img, idx_images(2, 1, 3, {0, 128, 255, 255, 0, 51}));
  write_bytes(lab, idx_labels(3, {3, 1, 2}));
  EXPECT_THROW(load_idx(img, lab), ParseError);  // count mismatch
  write_bytes(lab, idx_labels(2, {3, 1}));
  write_bytes(img, idx_images(2, 1, 3, {0, 128, 255, 255, 0}));
  EXPECT_THROW(load_idx(img, lab), ParseError);  // truncated
  write_bytes(img, idx_images(2, 1, 3, {0, 128, 255, 255, 0, 51, 7}));
  EXPECT_THROW(load_idx(img, lab), ParseError);  // trailing
  write_bytes(img, idx_labels(2, {3, 1}));
  EXPECT_THROW(load_idx(img, lab), ParseError);  // label magic in image slot
  EXPECT_THROW(load_idx(temp_path("nope"), lab), ParseError);
  fs::remove(img);
  fs::remove(lab);
}

TEST(Idx, BundledMnistSubset) {
  const Dataset ds = load_idx(kMnistImages, kMnistLabels);
  EXPECT_EQ(ds.size(), 10000u);
  EXPECT_EQ(ds.dim(), 784u);
  EXPECT_EQ(ds.num_classes, 10);
  ds.validate();
  const auto [lo, hi] = ds.value_range();
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 1.0);
  const Dataset sub = subsample(ds, 100, 1);
  EXPECT_EQ(sub.size(), 1000u);
}

TEST(Idx, RoundTripThroughWriter) {
  const Dataset ds = load_idx(kMnistImages, kMnistLabels);
  const std::vector<std::size_t> first(ds.class_counts().size(), 50);
  const Dataset sub = subsample(ds, first, 2);
  for (const std::string ext : {".idx", ".idx.gz"}) {
    const auto img = temp_path("rt_img" + ext);
    const auto lab = temp_path("rt_lab" + ext);
    write_idx(sub, img, lab, 28, 28);
    expect_same(load_idx(img, lab), sub);
    fs::remove(img);
    fs::remove(lab);
  }
}
