#include "pan/checkpoint.hpp"
#include "pan/dataset_io.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <sstream>
#include <string>

#include "pan/synth.hpp"

namespace pan {
namespace {

Dataset sample_dataset() {
  SynthConfig cfg;
  cfg.subjects = 2;
  cfg.seed = 31;
  cfg.protocol.reps = 2;
  cfg.protocol.rate_hz = 64;
  return generate_dataset(cfg);
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void expect_identical(const Dataset& a, const Dataset& b) {
  EXPECT_EQ(a.rate, b.rate);
  EXPECT_EQ(a.samples_per_window, b.samples_per_window);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].subject_id, b.records[i].subject_id);
    EXPECT_EQ(a.records[i].level, b.records[i].level);
    ASSERT_EQ(a.records[i].samples.size(), b.records[i].samples.size());
    EXPECT_EQ(0, std::memcmp(a.records[i].samples.data(), b.records[i].samples.data(),
                             a.records[i].samples.size() * sizeof(float)));
  }
}

TEST(DatasetFile, RoundTripIsBitExact) {
  const Dataset ds = sample_dataset();
  const std::string image = serialize_dataset(ds);
  const Dataset back = parse_dataset(image, "mem");
  expect_identical(ds, back);
  EXPECT_EQ(serialize_dataset(back), image);
}

TEST(DatasetFile, DiskRoundTrip) {
  const Dataset ds = sample_dataset();
  const std::string path = temp_path("pan_io_test_roundtrip.bin");
  write_dataset(ds, path);
  const Dataset back = read_dataset(path);
  expect_identical(ds, back);
  std::filesystem::remove(path);
}

TEST(DatasetFile, SameContentSameBytes) {
  const Dataset a = sample_dataset();
  const Dataset b = sample_dataset();
  EXPECT_EQ(serialize_dataset(a), serialize_dataset(b));
}

TEST(DatasetFile, RejectsEmptyWrite) {
  Dataset ds;
  EXPECT_THROW(serialize_dataset(ds), DomainError);
}

TEST(DatasetFile, BadMagicIsFormatError) {
  std::string image = serialize_dataset(sample_dataset());
  image[0] = 'X';
  EXPECT_THROW(parse_dataset(image, "mem"), FormatError);
}

TEST(DatasetFile, TruncationIsFormatErrorEverywhere) {
  const std::string image = serialize_dataset(sample_dataset());
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{9}, std::size_t{19},
                          std::size_t{21}, image.size() / 2, image.size() - 1}) {
    try {
      parse_dataset(image.substr(0, cut), "mem");
      FAIL() << "no error for truncation at " << cut;
    } catch (const FormatError& e) {
      EXPECT_NE(std::string(e.what()).find("byte"), std::string::npos);
    }
  }
}

TEST(DatasetFile, FlippedPayloadByteFailsChecksum) {
  std::string image = serialize_dataset(sample_dataset());
  image[image.size() / 2] = static_cast<char>(image[image.size() / 2] ^ 0x40);
  try {
    parse_dataset(image, "mem");
    FAIL() << "corruption not detected";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
}

TEST(DatasetFile, TrailingGarbageIsFormatError) {
  std::string image = serialize_dataset(sample_dataset());
  image += "extra";
  EXPECT_THROW(parse_dataset(image, "mem"), FormatError);
}

TEST(DatasetFile, OutOfRangeLevelIsFormatError) {
  Dataset ds = sample_dataset();
  std::string image = serialize_dataset(ds);
  // Level byte of the first record sits right after the 20-byte header and
  // the 2-byte subject id.
  image[22] = 7;
  EXPECT_THROW(parse_dataset(image, "mem"), FormatError);
}

TEST(DatasetFile, MissingFileIsIoError) {
  EXPECT_THROW(read_dataset(temp_path("pan_io_test_does_not_exist.bin")), IoError);
}

std::string tiny_csv() {
  std::ostringstream out;
  out << "subject_id,level,s0,s1,s2,s3\n";
  out << "1,0,0.5,0.25,-1.5,2\n";
  out << "1,4,1.5,1.25,0.5,3\n";
  out << "2,2,0,0,0.125,0\n";
  return out.str();
}

TEST(DatasetCsv, ParsesHeaderAndRows) {
  const Dataset ds = parse_dataset_csv(tiny_csv(), "mem.csv");
  ASSERT_EQ(ds.records.size(), 3u);
  EXPECT_EQ(ds.samples_per_window, 4u);
  EXPECT_EQ(ds.rate, 512u);
  EXPECT_EQ(ds.records[0].subject_id, 1u);
  EXPECT_EQ(ds.records[1].level, 4u);
  EXPECT_FLOAT_EQ(ds.records[0].samples[2], -1.5f);
  EXPECT_FLOAT_EQ(ds.records[2].samples[2], 0.125f);
}

TEST(DatasetCsv, SurvivesCrlfAndTrailingNewlines) {
  std::string text = "subject_id,level,s0,s1\r\n1,0,1,2\r\n1,1,3,4\r\n\n";
  const Dataset ds = parse_dataset_csv(text, "mem.csv");
  ASSERT_EQ(ds.records.size(), 2u);
  EXPECT_FLOAT_EQ(ds.records[1].samples[0], 3.0f);
}

TEST(DatasetCsv, RejectsMalformedInput) {
  EXPECT_THROW(parse_dataset_csv("", "m"), FormatError);
  EXPECT_THROW(parse_dataset_csv("id,level,s0\n1,0,1\n", "m"), FormatError);
  EXPECT_THROW(parse_dataset_csv("subject_id,level,x0\n1,0,1\n", "m"), FormatError);
  EXPECT_THROW(parse_dataset_csv("subject_id,level,s0\n", "m"), FormatError);
  EXPECT_THROW(parse_dataset_csv("subject_id,level,s0\n1,0\n", "m"), FormatError);
  EXPECT_THROW(parse_dataset_csv("subject_id,level,s0\n1,9,1\n", "m"), FormatError);
  EXPECT_THROW(parse_dataset_csv("subject_id,level,s0\n1,0,abc\n", "m"), FormatError);
  EXPECT_THROW(parse_dataset_csv("subject_id,level,s0\nx,0,1\n", "m"), FormatError);
}

TEST(DatasetCsv, ErrorsNameTheLine) {
  try {
    parse_dataset_csv("subject_id,level,s0\n1,0,1\n1,0,oops\n", "data.csv");
    FAIL() << "bad sample accepted";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("data.csv line 3"), std::string::npos);
  }
}

TEST(LoadDataset, SniffsBinaryAndCsv) {
  const Dataset ds = sample_dataset();
  const std::string bin_path = temp_path("pan_io_test_sniff.bin");
  const std::string csv_path = temp_path("pan_io_test_sniff.csv");
  const std::string junk_path = temp_path("pan_io_test_sniff.junk");
  write_dataset(ds, bin_path);
  wire::write_file(csv_path, tiny_csv());
  wire::write_file(junk_path, "neither of the two formats");
  expect_identical(load_dataset(bin_path), ds);
  EXPECT_EQ(load_dataset(csv_path).records.size(), 3u);
  EXPECT_THROW(load_dataset(junk_path), FormatError);
  std::filesystem::remove(bin_path);
  std::filesystem::remove(csv_path);
  std::filesystem::remove(junk_path);
}

TEST(Fnv, KnownHashes) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a64("hello"), 0xa430d84680aabd0bULL);
}

TEST(Checkpoint, RoundTripRestoresEveryParameter) {
  const ModelConfig cfg = ModelConfig::miniature(2);
  PainAttnNet trained(cfg, 3);
  PainAttnNet fresh(cfg, 9);

  // One train-mode forward moves the batchnorm running statistics off their
  // initial values, so the round trip below proves buffers are persisted too.
  Rng rng(11);
  Tensor x({2, 1, cfg.mscn.input_length});
  for (double& v : x.vec()) v = rng.normal();
  trained.set_mode(Mode::kTrain);
  trained.forward_logits(x);
  trained.set_mode(Mode::kEval);

  const std::string path = temp_path("pan_io_test_ckpt.bin");
  save_checkpoint(path, trained);
  const LoadedCheckpoint loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.config_text, cfg.canonical_string());
  apply_checkpoint(fresh, loaded);

  std::vector<std::pair<std::string, Tensor*>> a = checkpoint_tensors(trained);
  std::vector<std::pair<std::string, Tensor*>> b = checkpoint_tensors(fresh);
  ASSERT_EQ(a.size(), b.size());
  EXPECT_GT(a.size(), trained.parameters().size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    ASSERT_TRUE(a[i].second->same_shape(*b[i].second));
    EXPECT_EQ(0, std::memcmp(a[i].second->data(), b[i].second->data(),
                             a[i].second->size() * sizeof(double)));
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, SecondSaveIsByteIdentical) {
  const ModelConfig cfg = ModelConfig::miniature(2);
  PainAttnNet trained(cfg, 3);
  PainAttnNet fresh(cfg, 9);
  const std::string image =
      serialize_checkpoint(cfg.canonical_string(), checkpoint_tensors(trained));
  apply_checkpoint(fresh, parse_checkpoint(image, "mem"));
  EXPECT_EQ(serialize_checkpoint(cfg.canonical_string(), checkpoint_tensors(fresh)), image);
}

TEST(Checkpoint, RefusesDifferentConfiguration) {
  PainAttnNet model2(ModelConfig::miniature(2), 3);
  PainAttnNet model5(ModelConfig::miniature(5), 3);
  const std::string image = serialize_checkpoint(model2.config().canonical_string(),
                                                 checkpoint_tensors(model2));
  EXPECT_THROW(apply_checkpoint(model5, parse_checkpoint(image, "mem")), ConfigError);
}

TEST(Checkpoint, CorruptionIsFormatError) {
  PainAttnNet model(ModelConfig::miniature(2), 3);
  const std::string image =
      serialize_checkpoint(model.config().canonical_string(), checkpoint_tensors(model));

  std::string bad_magic = image;
  bad_magic[3] = '?';
  EXPECT_THROW(parse_checkpoint(bad_magic, "mem"), FormatError);

  EXPECT_THROW(parse_checkpoint(image.substr(0, 10), "mem"), FormatError);
  EXPECT_THROW(parse_checkpoint(image.substr(0, image.size() - 2), "mem"), FormatError);

  std::string flipped = image;
  flipped[image.size() / 2] = static_cast<char>(flipped[image.size() / 2] ^ 1);
  EXPECT_THROW(parse_checkpoint(flipped, "mem"), FormatError);

  EXPECT_THROW(parse_checkpoint(image + "x", "mem"), FormatError);
}

TEST(Checkpoint, TamperedConfigTextFailsDigest) {
  PainAttnNet model(ModelConfig::miniature(2), 3);
  std::string image =
      serialize_checkpoint(model.config().canonical_string(), checkpoint_tensors(model));
  // The config text starts at offset 20 (magic 8 + digest 8 + length 4).
  image[21] = static_cast<char>(image[21] ^ 0x20);
  try {
    parse_checkpoint(image, "mem");
    FAIL() << "tampered config accepted";
  } catch (const FormatError& e) {
    const std::string what = e.what();
    EXPECT_TRUE(what.find("digest") != std::string::npos ||
                what.find("checksum") != std::string::npos);
  }
}

}  // namespace
}  // namespace pan
