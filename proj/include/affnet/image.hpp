#pragma once

#include <bit>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include <jpeglib.h>

#include "affnet/tensor.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

namespace affnet::img {

// 8-bit interleaved image, row-major.
struct Image8 {
  int height = 0;
  int width = 0;
  int channels = 0;  // 1 or 3
  std::vector<std::uint8_t> pixels;

  std::size_t size() const { return pixels.size(); }
};

namespace detail {

inline void io_error(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error(what + ": " + path.string());
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

}  // namespace detail

// Writes the full payload to a sibling temp file, then renames into place.
inline void write_file_atomic(const std::filesystem::path& path,
                              const void* data, std::size_t byte_count) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) detail::io_error(tmp, "cannot open for writing");
    out.write(static_cast<const char*>(data),
              static_cast<std::streamsize>(byte_count));
    if (!out) detail::io_error(tmp, "short write");
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) detail::io_error(path, "cannot open for reading");
  auto size = static_cast<std::size_t>(in.tellg());
  std::vector<std::uint8_t> bytes(size);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(size));
  if (!in) detail::io_error(path, "short read");
  return bytes;
}

inline Image8 read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    detail::io_error(path, "png read failed");
  image.format = PNG_FORMAT_RGB;
  Image8 out;
  out.height = static_cast<int>(image.height);
  out.width = static_cast<int>(image.width);
  out.channels = 3;
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    detail::io_error(path, "png decode failed");
  }
  return out;
}

inline void write_png(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3)
    throw std::invalid_argument("write_png: channels must be 1 or 3");
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  if (!png_image_write_to_file(&png, tmp.string().c_str(), 0,
                               image.pixels.data(), 0, nullptr))
    detail::io_error(path, "png write failed");
  std::filesystem::rename(tmp, path);
}

inline Image8 read_jpeg(const std::filesystem::path& path) {
  std::FILE* file = std::fopen(path.string().c_str(), "rb");
  if (!file) detail::io_error(path, "cannot open for reading");

  jpeg_decompress_struct cinfo;
  detail::JpegErrorMgr err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = detail::jpeg_error_exit;
  Image8 out;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    std::fclose(file);
    detail::io_error(path, "jpeg decode failed");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.height = static_cast<int>(cinfo.output_height);
  out.width = static_cast<int>(cinfo.output_width);
  out.channels = 3;
  out.pixels.resize(static_cast<std::size_t>(out.height) * out.width * 3);
  const std::size_t row_stride = static_cast<std::size_t>(out.width) * 3;
  while (cinfo.output_scanline < cinfo.output_height) {
    std::uint8_t* row = out.pixels.data() + cinfo.output_scanline * row_stride;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  std::fclose(file);
  return out;
}

// Dispatches on the file's magic bytes, not its extension.
inline Image8 read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) detail::io_error(path, "cannot open for reading");
  unsigned char magic[2] = {0, 0};
  in.read(reinterpret_cast<char*>(magic), 2);
  in.close();
  if (magic[0] == 0x89 && magic[1] == 'P') return read_png(path);
  if (magic[0] == 0xff && magic[1] == 0xd8) return read_jpeg(path);
  detail::io_error(path, "unsupported image format");
  return {};
}

// Lossless float container: magic "AMI1", then u32 height/width/channels,
// then height*width*channels little-endian float32, row-major interleaved.
inline constexpr char kAmiMagic[4] = {'A', 'M', 'I', '1'};

inline void write_ami1(const std::filesystem::path& path,
                       const Tensor<float>& image) {
  affnet::detail::require(image.rank() == 3,
                          "write_ami1: image must be H x W x C");
  std::vector<std::uint8_t> bytes;
  bytes.reserve(16 + image.size() * 4);
  auto put_u32 = [&bytes](std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
      bytes.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  };
  bytes.insert(bytes.end(), kAmiMagic, kAmiMagic + 4);
  put_u32(static_cast<std::uint32_t>(image.dim(0)));
  put_u32(static_cast<std::uint32_t>(image.dim(1)));
  put_u32(static_cast<std::uint32_t>(image.dim(2)));
  std::size_t payload = image.size() * 4;
  std::size_t head = bytes.size();
  bytes.resize(head + payload);
  std::memcpy(bytes.data() + head, image.data(), payload);
  write_file_atomic(path, bytes.data(), bytes.size());
}

inline Tensor<float> read_ami1(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes = read_file(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kAmiMagic, 4) != 0)
    detail::io_error(path, "not an AMI1 file");
  auto get_u32 = [&bytes](std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
    return v;
  };
  std::size_t h = get_u32(4), w = get_u32(8), c = get_u32(12);
  std::size_t count = h * w * c;
  if (bytes.size() != 16 + count * 4)
    detail::io_error(path, "AMI1 payload size mismatch");
  Tensor<float> image({h, w, c});
  std::memcpy(image.data(), bytes.data() + 16, count * 4);
  return image;
}

}  // namespace affnet::img
