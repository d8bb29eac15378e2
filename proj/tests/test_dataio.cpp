#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>
#include <set>
#include <sstream>

#include "styledl/config.hpp"
#include "styledl/knn.hpp"

using namespace styledl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("styledl_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Manifest manifest_of(std::vector<std::vector<double>> rows) {
  Manifest m;
  m.label_names = default_label_names(rows.at(0).size());
  for (std::size_t i = 0; i < rows.size(); ++i) m.records.push_back({"r" + std::to_string(i), rows[i]});
  return m;
}

}  // namespace

TEST(Manifest, ParsesRecords) {
  std::istringstream in("#labels: a, b, c\nimg1.ppm,0.2,0.3,0.5\n\nimg2.ppm,1,0,0\n");
  Manifest m = parse_manifest(in, "/data");
  EXPECT_EQ(m.label_names, (std::vector<std::string>{"a", "b", "c"}));
  ASSERT_EQ(m.records.size(), 2u);
  EXPECT_EQ(m.resolve(m.records[0]), fs::path("/data/img1.ppm"));
}

TEST(Manifest, RenormalizesWithinTolerance) {
  std::istringstream in("#labels: a,b\nx.ppm,0.505,0.5\n");
  Manifest m = parse_manifest(in);
  EXPECT_NEAR(m.records[0].distribution[0] + m.records[0].distribution[1], 1.0, 1e-9);
  EXPECT_NEAR(m.records[0].distribution[0], 0.505 / 1.005, 1e-15);
}

TEST(Manifest, RejectsBadSum) {
  std::istringstream in("#labels: a,b\nx.ppm,0.25,0.25\n");
  EXPECT_THROW(parse_manifest(in), ValidationError);
}

TEST(Manifest, MalformedRowReportsLine) {
  std::istringstream in("#labels: a,b\nx.ppm,0.5,0.5\ny.ppm,0.5\n");
  try {
    parse_manifest(in);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::istringstream bad("x.ppm,1\n");
  EXPECT_THROW(parse_manifest(bad), ParseError);
}

TEST(Manifest, RoundTripsThroughText) {
  Manifest m = manifest_of({{0.25, 0.75}, {1.0, 0.0}});
  std::ostringstream out;
  write_manifest(out, m);
  std::istringstream in(out.str());
  Manifest back = parse_manifest(in);
  ASSERT_EQ(back.records.size(), 2u);
  EXPECT_EQ(back.records[0].distribution, m.records[0].distribution);
}

TEST(Ppm, SingleWhitePixel) {
  Image img = decode_ppm(std::string("P6\n1 1\n255\n\xff\xff\xff", 14));
  Tensor t = image_to_tensor(img);
  EXPECT_EQ(t.shape(), (Shape{3, 1, 1}));
  for (double v : t.data()) EXPECT_EQ(v, 1.0);
}

TEST(Ppm, KnownBytes) {
  std::string payload{0, 51, 102, static_cast<char>(153), static_cast<char>(204), static_cast<char>(255),
                      10, 20, 30, 40, 50, 60};
  Image img = decode_ppm("P6 # comment\n2 2\n255\n" + payload);
  Tensor t = image_to_tensor(img);
  EXPECT_EQ(t.shape(), (Shape{3, 2, 2}));
  // channel 0 = bytes 0, 3, 6, 9
  EXPECT_EQ(t.data()[0], 0.0);
  EXPECT_EQ(t.data()[1], 153.0 / 255.0);
  EXPECT_EQ(t.data()[2], 10.0 / 255.0);
  EXPECT_EQ(t.data()[3], 40.0 / 255.0);
  EXPECT_EQ(t.data()[4], 51.0 / 255.0);
  EXPECT_EQ(encode_ppm(img), "P6\n2 2\n255\n" + payload);
}

TEST(Ppm, RejectsAsciiAndTruncated) {
  EXPECT_THROW(decode_ppm("P3\n1 1\n255\n255 255 255\n"), FormatError);
  EXPECT_THROW(decode_ppm("P6\n2 2\n255\n\x01\x02"), FormatError);
  EXPECT_THROW(decode_ppm("P6\n1 1\n65535\n\x01\x02\x03\x04\x05\x06"), FormatError);
}

TEST(Ppm, HflipMirrorsRows) {
  Tensor x = Tensor::from({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor y = hflip(x);
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{3, 2, 1, 6, 5, 4}));
}

TEST(Synth, DeterministicCorpus) {
  fs::path a = scratch("synth_a"), b = scratch("synth_b");
  Manifest ma = synth_generate(3, 16, 8, 32, a);
  synth_generate(3, 16, 8, 32, b);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    EXPECT_EQ(read_file(e.path()), read_file(b / e.path().filename()));
  }
  EXPECT_EQ(files, 17u);
  Manifest back = load_manifest(a / "manifest.txt");
  EXPECT_EQ(back.label_count(), 8u);
  EXPECT_EQ(back.records.size(), 16u);
  for (const auto& r : ma.records) EXPECT_TRUE(is_simplex(r.distribution));
  EXPECT_EQ(load_ppm(back.resolve(back.records[0])).shape(), (Shape{3, 32, 32}));
}

TEST(Synth, DifferentSeedsDiffer) {
  fs::path a = scratch("synth_c"), b = scratch("synth_d");
  synth_generate(1, 2, 4, 32, a);
  synth_generate(2, 2, 4, 32, b);
  EXPECT_NE(read_file(a / "manifest.txt"), read_file(b / "manifest.txt"));
}

TEST(Split, RatioAndSeed) {
  Manifest m = manifest_of(std::vector<std::vector<double>>(10, {0.5, 0.5}));
  auto [tr, te] = split_dataset(m, 0.8, 4);
  EXPECT_EQ(tr.records.size(), 8u);
  EXPECT_EQ(te.records.size(), 2u);
  std::set<std::string> all;
  for (const auto& r : tr.records) all.insert(r.image_path);
  for (const auto& r : te.records) all.insert(r.image_path);
  EXPECT_EQ(all.size(), 10u);
  auto [tr2, te2] = split_dataset(m, 0.8, 4);
  EXPECT_EQ(tr2.records[0].image_path, tr.records[0].image_path);
  EXPECT_THROW(split_dataset(m, 1.0, 4), ConfigError);
}

TEST(Adjacency, SingleLabelRecordsGiveIdentity) {
  Tensor a = cooccurrence_adjacency(manifest_of({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
  EXPECT_EQ(std::vector<double>(a.data().begin(), a.data().end()), (std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1}));
}

TEST(Adjacency, CoPresentPairFormsHalfBlock) {
  Tensor a = cooccurrence_adjacency(manifest_of({{0.5, 0.5, 0}, {0.4, 0.6, 0}}));
  EXPECT_EQ(std::vector<double>(a.data().begin(), a.data().end()),
            (std::vector<double>{0.5, 0.5, 0, 0.5, 0.5, 0, 0, 0, 1}));
}

TEST(Adjacency, EmptyManifestWarnsAndReturnsIdentity) {
  Manifest m;
  m.label_names = {"a", "b"};
  std::vector<std::string> warnings;
  Tensor a = cooccurrence_adjacency(m, {}, &warnings);
  EXPECT_EQ(std::vector<double>(a.data().begin(), a.data().end()), (std::vector<double>{1, 0, 0, 1}));
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Config, ParsesKeysAndPreset) {
  TrainConfig c = parse_config_text("# comment\nR=3\nmu = 0.3\nablation=noAN\nstage_channels=8,8,16,16,32\n");
  EXPECT_EQ(c.R, 3u);
  EXPECT_EQ(c.mu, 0.3);
  EXPECT_EQ(c.ablation, Ablation::no_an);
  EXPECT_EQ(c.stage_channels[4], 32u);
  TrainConfig o = parse_config_text("preset=overfit\nseed=4\n");
  EXPECT_EQ(o.epochs, 300u);
  EXPECT_EQ(o.lr_decay, "none");
  EXPECT_EQ(o.seed, 4u);
  EXPECT_EQ(parse_config_text(c.to_text()).to_text(), c.to_text());
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_config_text("unknown=1\n"), ConfigError);
  EXPECT_THROW(parse_config_text("mu=1.5\n"), ConfigError);
  EXPECT_THROW(parse_config_text("R=two\n"), ConfigError);
  EXPECT_THROW(parse_config_text("ablation=Z\n"), ConfigError);
  EXPECT_THROW(parse_config_text("just text\n"), ParseError);
}

TEST(Config, LearningRateSchedule) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(c.lr_at(1), 0.01);
  EXPECT_DOUBLE_EQ(c.lr_at(10), 0.01);
  EXPECT_DOUBLE_EQ(c.lr_at(30), 0.001);
  EXPECT_DOUBLE_EQ(c.lr_at(50), 0.0001);
  c.lr_decay = "none";
  EXPECT_EQ(c.lr_at(50), 0.01);
}

TEST(Config, AblationComponents) {
  Components b = Components::of(Ablation::b);
  EXPECT_FALSE(b.style || b.attention || b.adversary || b.gcn);
  Components s = Components::of(Ablation::static_gcn_only);
  EXPECT_TRUE(s.gcn && !s.dynamic);
  EXPECT_FALSE(Components::of(Ablation::inter_only).intra_layer);
  EXPECT_FALSE(Components::of(Ablation::no_an).adversary);
  for (auto [a, name] : kAblationNames) EXPECT_EQ(parse_ablation(name), a);
}

TEST(Knn, NearestAndMean) {
  KnnBaseline knn;
  knn.add({0, 0}, {1, 0});
  knn.add({1, 1}, {0, 1});
  knn.add({5, 5}, {0.5, 0.5});
  EXPECT_EQ(knn.predict(std::vector<double>{1, 1}, 1), (std::vector<double>{0, 1}));
  auto all = knn.predict(std::vector<double>{0, 0}, 3);
  EXPECT_NEAR(all[0], 0.5, 1e-15);
  EXPECT_NEAR(all[1], 0.5, 1e-15);
  EXPECT_TRUE(is_simplex(all));
}

TEST(Knn, ClampsLargeKWithWarning) {
  KnnBaseline knn;
  knn.add({0}, {1, 0});
  knn.add({2}, {0, 1});
  std::vector<std::string> warnings;
  auto p = knn.predict(std::vector<double>{0}, 5, &warnings);
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_EQ(p, (std::vector<double>{0.5, 0.5}));
  EXPECT_THROW(knn.predict(std::vector<double>{0}, 0), ConfigError);
}

TEST(Knn, TiesResolveToEarlierRecord) {
  KnnBaseline knn;
  knn.add({1}, {1, 0});
  knn.add({-1}, {0, 1});
  EXPECT_EQ(knn.predict(std::vector<double>{0}, 1), (std::vector<double>{1, 0}));
}

TEST(Knn, FeatureIsBlockMeanLuma) {
  Image img;
  img.width = img.height = 16;
  img.rgb.assign(16 * 16 * 3, 255);
  auto f = knn_feature(img);
  EXPECT_EQ(f.size(), 64u);
  for (double v : f) EXPECT_NEAR(v, 1.0, 1e-12);
}
