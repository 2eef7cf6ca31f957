#include <gtest/gtest.h>

#include <cstdint>
#include <fstream>

#include "reat/datasets.hpp"

using namespace reat;

namespace {

void write_be32(std::ofstream& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(b), 4);
}

std::string temp_path(const std::string& name) { return testing::TempDir() + name; }

void write_idx_pair(const std::string& img_path, const std::string& lab_path, uint32_t count,
                    uint32_t magic_img = 0x00000803u, uint32_t magic_lab = 0x00000801u) {
  std::ofstream img(img_path, std::ios::binary);
  write_be32(img, magic_img);
  write_be32(img, count);
  write_be32(img, 2);
  write_be32(img, 2);
  for (uint32_t i = 0; i < count * 4; ++i) {
    unsigned char p = static_cast<unsigned char>(i * 7);
    img.write(reinterpret_cast<char*>(&p), 1);
  }
  std::ofstream lab(lab_path, std::ios::binary);
  write_be32(lab, magic_lab);
  write_be32(lab, count);
  for (uint32_t i = 0; i < count; ++i) {
    unsigned char y = static_cast<unsigned char>(i % 3);
    lab.write(reinterpret_cast<char*>(&y), 1);
  }
}

}  // namespace

TEST(Synthetic, CountsByConstruction) {
  LabeledDataset ds = load_synthetic_gaussians({.classes = 3, .dim = 2, .separation = 0.3,
                                                .n_per_class = 100, .seed = 1});
  EXPECT_EQ(ds.size(), 300u);
  auto hist = ds.class_histogram();
  EXPECT_EQ(hist, (std::vector<size_t>{100, 100, 100}));
  for (double v : ds.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Synthetic, DeterministicPerSeed) {
  SyntheticSpec spec{.classes = 4, .dim = 3, .separation = 0.4, .n_per_class = 20, .seed = 9};
  LabeledDataset a = load_synthetic_gaussians(spec);
  LabeledDataset b = load_synthetic_gaussians(spec);
  EXPECT_EQ(a.data, b.data);
  spec.seed = 10;
  LabeledDataset c = load_synthetic_gaussians(spec);
  EXPECT_NE(a.data, c.data);
}

TEST(Idx, HeaderCountRespected) {
  std::string img = temp_path("ok-images.idx"), lab = temp_path("ok-labels.idx");
  write_idx_pair(img, lab, 10);
  LabeledDataset ds = load_idx(img, lab);
  EXPECT_EQ(ds.size(), 10u);
  EXPECT_EQ(ds.sample_shape, (Shape{1, 2, 2}));
  EXPECT_EQ(ds.classes, 3u);
  EXPECT_EQ(ds.labels[0], 1);  // byte 0 shifts to 1-based
}

TEST(Idx, BadMagicRejected) {
  std::string img = temp_path("bad-images.idx"), lab = temp_path("bad-labels.idx");
  write_idx_pair(img, lab, 4, /*magic_img=*/0x00000777u);
  EXPECT_THROW(load_idx(img, lab), std::runtime_error);
}

TEST(Idx, TruncatedRejected) {
  std::string img = temp_path("trunc-images.idx"), lab = temp_path("trunc-labels.idx");
  write_idx_pair(img, lab, 10);
  // rewrite the image file with the header only
  std::ofstream re(img, std::ios::binary);
  write_be32(re, 0x00000803u);
  write_be32(re, 10);
  write_be32(re, 2);
  write_be32(re, 2);
  re.close();
  EXPECT_THROW(load_idx(img, lab), std::runtime_error);
}

TEST(Cifar, RecordArithmetic) {
  std::string path = temp_path("cifar.bin");
  std::ofstream out(path, std::ios::binary);
  std::vector<unsigned char> rec(3073, 37);
  rec[0] = 0;
  out.write(reinterpret_cast<char*>(rec.data()), rec.size());
  rec[0] = 1;
  out.write(reinterpret_cast<char*>(rec.data()), rec.size());
  out.close();

  LabeledDataset ds = load_cifar_binary({path});
  EXPECT_EQ(ds.size(), 2u);  // file_size / 3073
  EXPECT_EQ(ds.labels, (std::vector<int>{1, 2}));
  EXPECT_EQ(ds.sample_shape, (Shape{3, 32, 32}));
  EXPECT_NEAR(ds.data[0], 37.0 / 255.0, 1e-12);
}

TEST(Cifar, BadLengthRejected) {
  std::string path = temp_path("cifar-bad.bin");
  std::ofstream out(path, std::ios::binary);
  std::vector<unsigned char> rec(3072, 0);  // one byte short
  out.write(reinterpret_cast<char*>(rec.data()), rec.size());
  out.close();
  EXPECT_THROW(load_cifar_binary({path}), std::runtime_error);
}

TEST(LongTail, UnitRatioKeepsEverything) {
  LongTailSpec spec{.classes = 5, .ur = 1.0, .profile = TailProfile::exponential,
                    .head_count = 100, .seed = 3};
  ClassCounts counts = long_tail_counts(spec);
  EXPECT_EQ(counts.n, (std::vector<size_t>{100, 100, 100, 100, 100}));
}

TEST(LongTail, ExponentialProfileWorkedExample) {
  // round(100 * 100^(-(i-1)/4)) for i = 1..5
  LongTailSpec spec{.classes = 5, .ur = 100.0, .profile = TailProfile::exponential,
                    .head_count = 100, .seed = 3};
  EXPECT_EQ(long_tail_counts(spec).n, (std::vector<size_t>{100, 32, 10, 3, 1}));
}

TEST(LongTail, TailCountFollowsUrDefinition) {
  LongTailSpec spec{.classes = 10, .ur = 50.0, .profile = TailProfile::exponential,
                    .head_count = 5000, .seed = 3};
  EXPECT_EQ(long_tail_counts(spec).n.back(), 100u);  // 5000 / 50
}

TEST(LongTail, LinearProfileEndpoints) {
  LongTailSpec spec{.classes = 5, .ur = 100.0, .profile = TailProfile::linear,
                    .head_count = 500, .seed = 3};
  ClassCounts counts = long_tail_counts(spec);
  EXPECT_EQ(counts.n.front(), 500u);
  EXPECT_EQ(counts.n.back(), 5u);  // 500 / 100
  for (size_t i = 0; i + 1 < counts.n.size(); ++i) EXPECT_GE(counts.n[i], counts.n[i + 1]);
}

TEST(LongTail, RatioWithinRoundingSlack) {
  for (double ur : {10.0, 20.0, 50.0, 100.0})
    for (size_t c : {size_t{3}, size_t{10}, size_t{100}}) {
      LongTailSpec spec{.classes = c, .ur = ur, .profile = TailProfile::exponential,
                        .head_count = 1000, .seed = 3};
      ClassCounts counts = long_tail_counts(spec);
      for (size_t i = 0; i + 1 < counts.n.size(); ++i) EXPECT_GE(counts.n[i], counts.n[i + 1]);
      double expect_tail = 1000.0 / ur;
      EXPECT_LE(std::fabs(static_cast<double>(counts.n.back()) - expect_tail), 1.0)
          << "ur=" << ur << " c=" << c;
    }
}

TEST(LongTail, InvalidSpecRejected) {
  LongTailSpec spec{.classes = 5, .ur = 0.0, .profile = TailProfile::exponential,
                    .head_count = 100, .seed = 3};
  EXPECT_THROW(long_tail_counts(spec), std::invalid_argument);
  spec.ur = 200.0;  // head_count < ur
  EXPECT_THROW(long_tail_counts(spec), std::invalid_argument);
}

TEST(LongTail, SubsampleDeterministicAndSized) {
  LabeledDataset src = load_synthetic_gaussians({.classes = 3, .dim = 2, .separation = 0.3,
                                                 .n_per_class = 200, .seed = 5});
  LongTailSpec spec{.classes = 3, .ur = 10.0, .profile = TailProfile::exponential,
                    .head_count = 150, .seed = 17};
  auto [a, counts_a] = build_long_tailed(src, spec);
  auto [b, counts_b] = build_long_tailed(src, spec);
  EXPECT_EQ(a.data, b.data);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(counts_a.n, counts_b.n);
  EXPECT_EQ(a.class_histogram(), std::vector<size_t>(counts_a.n.begin(), counts_a.n.end()));

  spec.seed = 18;
  auto [c, counts_c] = build_long_tailed(src, spec);
  EXPECT_NE(a.data, c.data);
  EXPECT_EQ(counts_a.n, counts_c.n);
}

TEST(LongTail, InsufficientSourceRejected) {
  LabeledDataset src = load_synthetic_gaussians({.classes = 3, .dim = 2, .separation = 0.3,
                                                 .n_per_class = 50, .seed = 5});
  LongTailSpec spec{.classes = 3, .ur = 2.0, .profile = TailProfile::exponential,
                    .head_count = 100, .seed = 17};
  EXPECT_THROW(build_long_tailed(src, spec), std::runtime_error);
}

TEST(Partition, WorkedExamples) {
  ClassPartition p10 = partition_classes(10);
  EXPECT_EQ(p10.head, (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(p10.body, (std::vector<int>{4, 5, 6}));
  EXPECT_EQ(p10.tail, (std::vector<int>{7, 8, 9, 10}));

  ClassPartition p3 = partition_classes(3);
  EXPECT_EQ(p3.head, (std::vector<int>{1}));
  EXPECT_TRUE(p3.body.empty());
  EXPECT_EQ(p3.tail, (std::vector<int>{2, 3}));

  ClassPartition p100 = partition_classes(100);
  EXPECT_EQ(p100.head.size(), 33u);
  EXPECT_EQ(p100.tail.front(), 67);
}

TEST(Partition, DisjointCoverExhaustive) {
  for (size_t c = 2; c <= 1000; ++c) {
    ClassPartition p = partition_classes(c);
    std::vector<int> seen(c + 1, 0);
    for (int v : p.head) ++seen[v];
    for (int v : p.body) ++seen[v];
    for (int v : p.tail) ++seen[v];
    for (size_t i = 1; i <= c; ++i) ASSERT_EQ(seen[i], 1) << "C=" << c << " class " << i;
  }
}

TEST(BalancedSmall, ExactDivision) {
  LabeledDataset src = load_synthetic_gaussians({.classes = 3, .dim = 2, .separation = 0.3,
                                                 .n_per_class = 200, .seed = 5});
  ClassCounts counts{{150, 100, 50}};
  LabeledDataset bs = build_balanced_small(src, counts, 1);
  EXPECT_EQ(bs.size(), 300u);
  EXPECT_EQ(bs.class_histogram(), (std::vector<size_t>{100, 100, 100}));
}

TEST(BalancedSmall, RemainderToFirstClasses) {
  LabeledDataset src = load_synthetic_gaussians({.classes = 3, .dim = 2, .separation = 0.3,
                                                 .n_per_class = 200, .seed = 5});
  ClassCounts counts{{150, 100, 51}};
  LabeledDataset bs = build_balanced_small(src, counts, 1);
  EXPECT_EQ(bs.class_histogram(), (std::vector<size_t>{101, 100, 100}));
}

TEST(BalancedSmall, BalancedSourceSameSize) {
  LabeledDataset src = load_synthetic_gaussians({.classes = 3, .dim = 2, .separation = 0.3,
                                                 .n_per_class = 100, .seed = 5});
  ClassCounts counts{{100, 100, 100}};
  LabeledDataset bs = build_balanced_small(src, counts, 1);
  EXPECT_EQ(bs.size(), src.size());
}

TEST(BalancedSmall, ProfileThroughBuilder) {
  LabeledDataset src = load_synthetic_gaussians({.classes = 3, .dim = 2, .separation = 0.3,
                                                 .n_per_class = 200, .seed = 5});
  LongTailSpec spec{.classes = 3, .ur = 10.0, .profile = TailProfile::balanced_small,
                    .head_count = 150, .seed = 17};
  LongTailSpec exp_spec = spec;
  exp_spec.profile = TailProfile::exponential;
  size_t exp_total = long_tail_counts(exp_spec).total();
  auto [ds, counts] = build_long_tailed(src, spec);
  EXPECT_EQ(ds.size(), exp_total);
  auto hist = ds.class_histogram();
  EXPECT_LE(*std::max_element(hist.begin(), hist.end()) -
                *std::min_element(hist.begin(), hist.end()),
            1u);
}
