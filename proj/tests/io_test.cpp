#include <gtest/gtest.h>

#include <jpeglib.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "affnet/ami.hpp"
#include "affnet/checkpoint.hpp"
#include "affnet/image.hpp"
#include "affnet/network.hpp"
#include "affnet/rng.hpp"
#include "support/temp_dir.hpp"

namespace fs = std::filesystem;
using affnet::Rng;
using affnet::Tensor;

namespace {

affnet::img::Image8 gradient_image(int h, int w) {
  affnet::img::Image8 image;
  image.height = h;
  image.width = w;
  image.channels = 3;
  image.pixels.resize(static_cast<std::size_t>(h) * w * 3);
  for (std::size_t i = 0; i < image.pixels.size(); ++i)
    image.pixels[i] = static_cast<std::uint8_t>((i * 7) % 256);
  return image;
}

// Test-side JPEG encoder so the production decoder has something to read.
void write_jpeg_fixture(const fs::path& path, const affnet::img::Image8& image) {
  jpeg_compress_struct cinfo;
  jpeg_error_mgr jerr;
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);
  std::FILE* file = std::fopen(path.string().c_str(), "wb");
  ASSERT_NE(file, nullptr);
  jpeg_stdio_dest(&cinfo, file);
  cinfo.image_width = static_cast<JDIMENSION>(image.width);
  cinfo.image_height = static_cast<JDIMENSION>(image.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, 95, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  const std::size_t stride = static_cast<std::size_t>(image.width) * 3;
  while (cinfo.next_scanline < cinfo.image_height) {
    const std::uint8_t* row = image.pixels.data() + cinfo.next_scanline * stride;
    JSAMPROW rows[1] = {const_cast<JSAMPROW>(row)};
    jpeg_write_scanlines(&cinfo, rows, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::fclose(file);
}

}  // namespace

TEST(PngIo, RoundTripIsLossless) {
  TempDir dir("png");
  auto image = gradient_image(9, 13);
  const fs::path path = dir.path() / "a.png";
  affnet::img::write_png(path, image);
  auto back = affnet::img::read_png(path);
  EXPECT_EQ(back.height, image.height);
  EXPECT_EQ(back.width, image.width);
  EXPECT_EQ(back.pixels, image.pixels);
  EXPECT_FALSE(fs::exists(dir.path() / "a.png.tmp"));
}

TEST(PngIo, ReadDispatchesOnMagicBytes) {
  TempDir dir("magic");
  auto image = gradient_image(4, 4);
  const fs::path misnamed = dir.path() / "actually_png.jpg";
  affnet::img::write_png(misnamed, image);
  auto back = affnet::img::read_image(misnamed);
  EXPECT_EQ(back.pixels, image.pixels);
}

TEST(JpegIo, DecodesRgbWithinQuantizationError) {
  TempDir dir("jpeg");
  affnet::img::Image8 image;
  image.height = 16;
  image.width = 16;
  image.channels = 3;
  image.pixels.assign(16 * 16 * 3, 128);  // flat gray survives compression
  const fs::path path = dir.path() / "a.jpg";
  write_jpeg_fixture(path, image);
  auto back = affnet::img::read_image(path);
  ASSERT_EQ(back.pixels.size(), image.pixels.size());
  for (std::size_t i = 0; i < back.pixels.size(); ++i)
    EXPECT_NEAR(static_cast<int>(back.pixels[i]),
                static_cast<int>(image.pixels[i]), 4);
}

TEST(Ami1Container, RoundTripIsBitExact) {
  TempDir dir("ami1");
  Rng rng(5);
  Tensor<float> image({6, 7, 3});
  for (std::size_t i = 0; i < image.size(); ++i)
    image[i] = static_cast<float>(rng.uniform(-10.0, 10.0));
  const fs::path path = dir.path() / "x.ami1";
  affnet::img::write_ami1(path, image);
  Tensor<float> back = affnet::img::read_ami1(path);
  EXPECT_EQ(back, image);
}

TEST(Ami1Container, HeaderLayoutIsStable) {
  TempDir dir("ami1hdr");
  Tensor<float> image({2, 3, 3});
  const fs::path path = dir.path() / "x.ami1";
  affnet::img::write_ami1(path, image);
  auto bytes = affnet::img::read_file(path);
  ASSERT_EQ(bytes.size(), 16u + 2 * 3 * 3 * 4);
  EXPECT_EQ(bytes[0], 'A');
  EXPECT_EQ(bytes[1], 'M');
  EXPECT_EQ(bytes[2], 'I');
  EXPECT_EQ(bytes[3], '1');
  EXPECT_EQ(bytes[4], 2);  // height, little-endian
  EXPECT_EQ(bytes[8], 3);  // width
  EXPECT_EQ(bytes[12], 3);  // channels
}

TEST(Ami1Container, RejectsWrongMagic) {
  TempDir dir("ami1bad");
  const fs::path path = dir.path() / "bad.ami1";
  const char junk[] = "NOPE0000000000000000";
  affnet::img::write_file_atomic(path, junk, sizeof(junk));
  EXPECT_THROW(affnet::img::read_ami1(path), std::runtime_error);
}

TEST(FrameFolder, LoadsSortedAndScaled) {
  TempDir dir("clip");
  const fs::path clip = dir.path() / "clip01";
  fs::create_directories(clip);
  for (int f : {2, 0, 1}) {  // written out of order on purpose
    affnet::img::Image8 frame;
    frame.height = 3;
    frame.width = 3;
    frame.channels = 3;
    frame.pixels.assign(27, static_cast<std::uint8_t>(f * 100));
    affnet::img::write_png(clip / ("f" + std::to_string(f) + ".png"), frame);
  }
  auto seq = affnet::ami::load_frame_sequence(clip);
  ASSERT_EQ(seq.frame_count(), 3);
  EXPECT_DOUBLE_EQ(seq.frames[0][0], 0.0);
  EXPECT_DOUBLE_EQ(seq.frames[1][0], 100.0 / 255.0);
  EXPECT_DOUBLE_EQ(seq.frames[2][0], 200.0 / 255.0);
  EXPECT_EQ(seq.video_id, "clip01");
}

TEST(FrameFolder, RejectsEmptyClip) {
  TempDir dir("empty");
  const fs::path clip = dir.path() / "clip";
  fs::create_directories(clip);
  EXPECT_THROW(affnet::ami::load_frame_sequence(clip), std::invalid_argument);
}

TEST(FrameFolder, MissingDirectoryNamesTheClip) {
  try {
    affnet::ami::load_frame_sequence("/nonexistent/clip99");
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("clip99"), std::string::npos);
  }
}

TEST(Checkpoint, RoundTripRestoresEveryTensor) {
  TempDir dir("ckpt");
  affnet::NetworkSpec spec = affnet::make_spec(affnet::Variant::kAffectiveNet);
  spec.input_height = spec.input_width = 16;
  spec.depth_divisor = 8;
  spec.seed = 77;
  auto net = affnet::build_network<float>(spec);
  // Perturb running stats so the round trip covers non-trainable tensors.
  net.merge_bn.running_mean[0] = 0.123f;
  net.merge_bn.running_var[1] = 1.75f;

  const fs::path path = dir.path() / "model.afnw";
  affnet::save_checkpoint(path, net);
  auto loaded = affnet::load_checkpoint(path);
  auto params = net.parameters();
  auto loaded_params = loaded.parameters();
  ASSERT_EQ(params.size(), loaded_params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    EXPECT_EQ(params[i].name, loaded_params[i].name);
    EXPECT_EQ(*params[i].tensor, *loaded_params[i].tensor);
  }

  // Same forward outputs through the restored model.
  Rng rng(3);
  Tensor<float> batch({2, 16, 16, 3});
  for (std::size_t i = 0; i < batch.size(); ++i)
    batch[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  EXPECT_EQ(affnet::forward(net, batch), affnet::forward(loaded, batch));
}

TEST(Checkpoint, HeaderStartsWithMagicAndVersion) {
  TempDir dir("ckpthdr");
  affnet::NetworkSpec spec = affnet::make_spec(affnet::Variant::kWoMFL);
  spec.input_height = spec.input_width = 16;
  spec.depth_divisor = 8;
  auto net = affnet::build_network<float>(spec);
  const fs::path path = dir.path() / "m.afnw";
  affnet::save_checkpoint(path, net);
  auto bytes = affnet::img::read_file(path);
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(bytes[0], 'A');
  EXPECT_EQ(bytes[1], 'F');
  EXPECT_EQ(bytes[2], 'N');
  EXPECT_EQ(bytes[3], 'W');
  EXPECT_EQ(bytes[4], 1);  // format version, little-endian
}

TEST(Checkpoint, RejectsForeignFile) {
  TempDir dir("ckptbad");
  const fs::path path = dir.path() / "bad.afnw";
  const char junk[] = "definitely not a checkpoint";
  affnet::img::write_file_atomic(path, junk, sizeof(junk));
  EXPECT_THROW(affnet::load_checkpoint(path), std::runtime_error);
}

TEST(Checkpoint, SaveIsByteDeterministic) {
  TempDir dir("ckptdet");
  affnet::NetworkSpec spec = affnet::make_spec(affnet::Variant::kWoMFL);
  spec.input_height = spec.input_width = 16;
  spec.depth_divisor = 8;
  spec.seed = 5;
  auto net = affnet::build_network<float>(spec);
  affnet::save_checkpoint(dir.path() / "a.afnw", net);
  affnet::save_checkpoint(dir.path() / "b.afnw", net);
  EXPECT_EQ(affnet::img::read_file(dir.path() / "a.afnw"),
            affnet::img::read_file(dir.path() / "b.afnw"));
}
