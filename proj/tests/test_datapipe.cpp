#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "tsan/datapipe.hpp"

using namespace tsan;
namespace fs = std::filesystem;

namespace {

// Writes `frames` synthetic planar 4:2:0 frames and returns the path.
std::string write_test_yuv(const std::string& name, const Geometry& g, int frames, uint64_t seed) {
  const std::string path = (fs::temp_directory_path() / name).string();
  std::ofstream os(path, std::ios::binary);
  Rng rng(seed);
  for (int i = 0; i < frames; ++i) {
    YuvFrame f;
    f.luma = rng.uniform_tensor({g.height, g.width}, 0.0f, 1.0f);
    f.cb.assign(static_cast<size_t>(g.width / 2) * (g.height / 2),
                static_cast<uint8_t>(100 + i));
    f.cr.assign(f.cb.size(), static_cast<uint8_t>(200 - i));
    append_yuv420_frame(os, g, f);
  }
  return path;
}

}  // namespace

TEST_CASE("geometry parsing") {
  const Geometry g = parse_geometry("1920x1080@29.97");
  CHECK(g.width == 1920);
  CHECK(g.height == 1080);
  CHECK(g.fps == doctest::Approx(29.97));
  CHECK(parse_geometry("64x48").fps == doctest::Approx(25.0));
  CHECK_THROWS_AS(parse_geometry("banana"), std::invalid_argument);
  CHECK_THROWS_AS(parse_geometry("63x48"), std::invalid_argument);  // odd luma width

  Geometry fromname;
  CHECK(geometry_from_filename("/data/foo_352x288_30.yuv", &fromname));
  CHECK(fromname.width == 352);
  CHECK(fromname.fps == doctest::Approx(30.0));
  CHECK(geometry_from_filename("/data/bar_64x48.yuv", &fromname));
  CHECK(fromname.fps == doctest::Approx(25.0));
  CHECK(!geometry_from_filename("/data/noconvention.yuv", &fromname));
}

TEST_CASE("yuv 4:2:0 store round-trips frames with quantized luma") {
  const Geometry g = parse_geometry("32x16");
  const std::string path = write_test_yuv("pipe_rt.yuv", g, 3, 61);
  CHECK(yuv420_frame_count(path, g) == 3);

  const YuvFrame f1 = read_yuv420_frame(path, g, 1);
  CHECK(f1.cb[0] == 101);
  CHECK(f1.cr[0] == 199);
  // Luma survives the 8-bit quantization within half a grey level.
  Rng rng(61);
  Tensor unused = rng.uniform_tensor({g.height, g.width}, 0.0f, 1.0f);
  Tensor expect = rng.uniform_tensor({g.height, g.width}, 0.0f, 1.0f);
  for (size_t i = 0; i < expect.v.size(); ++i)
    CHECK(std::abs(f1.luma.v[i] - expect.v[i]) <= 0.5f / 255.0f + 1e-6f);

  CHECK_THROWS_WITH_AS(read_yuv420_frame(path, g, 3), doctest::Contains("bytes"),
                       std::runtime_error);
  fs::remove(path);
}

TEST_CASE("encoder parameter string carries the gop/reference/filter settings") {
  EncodeProfile p;
  CHECK(x265_param_string(p) == "keyint=250:min-keyint=250:ref=3:deblock=1:sao=1");
  p.gop_size = 100;
  p.max_references = 1;
  p.deblock = false;
  CHECK(x265_param_string(p) == "keyint=100:min-keyint=100:ref=1:deblock=0:sao=1");
}

TEST_CASE("both encoder backends emit complete command lines") {
  const Geometry g = parse_geometry("352x288@30");
  EncodeProfile p;
  p.bitrate_kbps = 500;

  const EncoderBackend ff{"ffmpeg", "ffmpeg"};
  const std::string fcmd = ff.encode_cmd("in.yuv", g, p, "out.hevc");
  for (const char* part : {"352x288", "libx265", "-preset medium", "-b:v 500k", "keyint=250"})
    CHECK(fcmd.find(part) != std::string::npos);

  const EncoderBackend own{"tsan-codec", "/opt/tsan-codec"};
  const std::string ocmd = own.encode_cmd("in.yuv", g, p, "out.hevc");
  for (const char* part : {"encode", "352x288@30", "--bitrate-kbps 500", "--keyint 250",
                           "--refs 3", "--preset medium"})
    CHECK(ocmd.find(part) != std::string::npos);
  CHECK(own.decode_cmd("x.hevc", g, "y.yuv").find("decode") != std::string::npos);
}

TEST_CASE("sequence manifests round-trip every field") {
  SequenceRecord rec;
  rec.id = "clip1";
  rec.width = 64;
  rec.height = 48;
  rec.frame_count = 10;
  rec.frame_rate = 30;
  rec.resolution_class = "LR";
  rec.raw_path = "/w/clip1/raw.yuv";
  rec.initial_path = "/w/clip1/initial.yuv";
  rec.transcoded_path = "/w/clip1/transcoded.yuv";
  rec.checksums["raw"] = "abc123";
  rec.command_lines = {"encode one", "decode two"};

  const std::string path = (fs::temp_directory_path() / "manifest_rt.txt").string();
  write_manifest(rec, path);
  const SequenceRecord back = read_manifest(path);
  CHECK(back.id == rec.id);
  CHECK(back.width == rec.width);
  CHECK(back.height == rec.height);
  CHECK(back.frame_count == rec.frame_count);
  CHECK(back.resolution_class == "LR");
  CHECK(back.transcoded_path == rec.transcoded_path);
  CHECK(back.checksums.at("raw") == "abc123");
  CHECK(back.command_lines == rec.command_lines);
  fs::remove(path);

  CHECK_THROWS(read_manifest(path));  // gone
}

TEST_CASE("clip sampling: deterministic crops, temporal border replication") {
  const Geometry g = parse_geometry("48x32");
  SequenceRecord rec;
  rec.id = "s";
  rec.width = g.width;
  rec.height = g.height;
  rec.frame_count = 5;
  rec.raw_path = write_test_yuv("pipe_raw.yuv", g, 5, 71);
  rec.initial_path = write_test_yuv("pipe_init.yuv", g, 5, 72);
  rec.transcoded_path = write_test_yuv("pipe_trans.yuv", g, 5, 73);

  PatchSpec spec;
  spec.size = 16;
  spec.temporal_radius = 1;
  spec.seed = 99;

  const ClipSample a = sample_clip(rec, 2, spec);
  REQUIRE(a.frames.size() == 3);
  CHECK(a.center_index == 1);
  REQUIRE(a.label_init.has_value());
  REQUIRE(a.label_raw.has_value());
  CHECK(a.frames[0].shape == std::vector<int>{16, 16});

  // Same seed, same crop; different seed, (almost surely) different crop.
  const ClipSample b = sample_clip(rec, 2, spec);
  CHECK(a.frames[1].v == b.frames[1].v);
  CHECK(a.label_raw->v == b.label_raw->v);

  // First frame of the sequence: the t-1 neighbor replicates the center.
  const ClipSample edge = sample_clip(rec, 0, spec);
  CHECK(edge.frames[0].v == edge.frames[1].v);

  CHECK_THROWS_AS(sample_clip(rec, 7, spec), std::invalid_argument);
  PatchSpec big;
  big.size = 128;
  CHECK_THROWS_AS(sample_clip(rec, 2, big), std::invalid_argument);

  // Full-frame "patch" works and is deterministic for evaluation paths.
  PatchSpec whole;
  whole.size = 32;
  whole.temporal_radius = 1;
  const ClipSample w = sample_clip(rec, 2, whole);
  CHECK(w.frames[1].shape == std::vector<int>{32, 32});

  fs::remove(rec.raw_path);
  fs::remove(rec.initial_path);
  fs::remove(rec.transcoded_path);
}

TEST_CASE("encoder detection errors are actionable when nothing is present") {
  // Point the lookup away from any installed tool.
  const char* old_path = std::getenv("PATH");
  const char* old_codec = std::getenv("TSAN_CODEC");
  setenv("PATH", "/nonexistent", 1);
  unsetenv("TSAN_CODEC");
  // The bundled tool sits next to the test binary only in full builds; skip
  // the assertion if it is reachable.
  if (pipe_detail::find_bundled_codec().empty())
    CHECK_THROWS_WITH_AS(detect_encoder(""), doctest::Contains("no external encoder"),
                         std::runtime_error);
  if (old_path) setenv("PATH", old_path, 1);
  if (old_codec) setenv("TSAN_CODEC", old_codec, 1);
}
