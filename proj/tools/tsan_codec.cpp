// Minimal HEVC encode/decode tool for the dataset pipeline, built on the
// system libavcodec (libx265 for encoding). It reads and writes planar 8-bit
// 4:2:0 frames; the encoded stream is raw Annex B HEVC.
//
//   tsan-codec encode --input in.yuv --geometry WxH@fps --bitrate-kbps N
//                     [--preset medium --keyint 250 --refs 3 --deblock 1 --sao 1]
//                     --output out.hevc
//   tsan-codec decode --input in.hevc --output out.yuv

#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

extern "C" {
#include <libavcodec/avcodec.h>
#include <libavutil/opt.h>
#include <libavutil/rational.h>
}

#include "tsan/yuv.hpp"

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw std::runtime_error("cannot open " + path);
  return f;
}

void check_av(int rc, const std::string& what) {
  if (rc < 0) {
    char buf[256];
    av_strerror(rc, buf, sizeof(buf));
    throw std::runtime_error(what + ": " + buf);
  }
}

void drain_packets(AVCodecContext* ctx, AVPacket* pkt, std::FILE* out) {
  while (true) {
    const int rc = avcodec_receive_packet(ctx, pkt);
    if (rc == AVERROR(EAGAIN) || rc == AVERROR_EOF) return;
    check_av(rc, "receive_packet");
    std::fwrite(pkt->data, 1, static_cast<size_t>(pkt->size), out);
    av_packet_unref(pkt);
  }
}

int run_encode(const std::string& input, const std::string& geometry, int bitrate_kbps,
               const std::string& preset, int keyint, int refs, int deblock, int sao,
               const std::string& output) {
  const tsan::Geometry g = tsan::parse_geometry(geometry);
  const int nframes = tsan::yuv420_frame_count(input, g);
  if (nframes == 0) throw std::runtime_error("no frames in " + input);

  const AVCodec* codec = avcodec_find_encoder_by_name("libx265");
  if (!codec) throw std::runtime_error("libx265 encoder not available in libavcodec");
  AVCodecContext* ctx = avcodec_alloc_context3(codec);
  ctx->width = g.width;
  ctx->height = g.height;
  ctx->pix_fmt = AV_PIX_FMT_YUV420P;
  ctx->time_base = av_inv_q(av_d2q(g.fps, 1000000));
  ctx->framerate = av_d2q(g.fps, 1000000);
  ctx->bit_rate = static_cast<int64_t>(bitrate_kbps) * 1000;  // average-bitrate mode
  ctx->gop_size = keyint;
  ctx->refs = refs;
  av_opt_set(ctx->priv_data, "preset", preset.c_str(), 0);
  const std::string params = "keyint=" + std::to_string(keyint) +
                             ":min-keyint=" + std::to_string(keyint) +
                             ":ref=" + std::to_string(refs) +
                             ":deblock=" + std::to_string(deblock) +
                             ":sao=" + std::to_string(sao) + ":log-level=error";
  av_opt_set(ctx->priv_data, "x265-params", params.c_str(), 0);
  check_av(avcodec_open2(ctx, codec, nullptr), "open libx265");

  FilePtr out = open_file(output, "wb");
  AVFrame* frame = av_frame_alloc();
  frame->format = AV_PIX_FMT_YUV420P;
  frame->width = g.width;
  frame->height = g.height;
  check_av(av_frame_get_buffer(frame, 0), "alloc frame");
  AVPacket* pkt = av_packet_alloc();

  for (int i = 0; i < nframes; ++i) {
    check_av(av_frame_make_writable(frame), "frame writable");
    const tsan::YuvFrame f = tsan::read_yuv420_frame(input, g, i);
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x) {
        const float v = f.luma.v[static_cast<size_t>(y) * g.width + x] * 255.0f + 0.5f;
        frame->data[0][y * frame->linesize[0] + x] =
            static_cast<uint8_t>(std::clamp(v, 0.0f, 255.0f));
      }
    const int cw = g.width / 2, ch = g.height / 2;
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x) {
        frame->data[1][y * frame->linesize[1] + x] = f.cb[static_cast<size_t>(y) * cw + x];
        frame->data[2][y * frame->linesize[2] + x] = f.cr[static_cast<size_t>(y) * cw + x];
      }
    frame->pts = i;
    check_av(avcodec_send_frame(ctx, frame), "send_frame");
    drain_packets(ctx, pkt, out.get());
  }
  check_av(avcodec_send_frame(ctx, nullptr), "flush encoder");
  drain_packets(ctx, pkt, out.get());

  av_packet_free(&pkt);
  av_frame_free(&frame);
  avcodec_free_context(&ctx);
  return 0;
}

void write_decoded(AVFrame* frame, std::FILE* out) {
  if (frame->format != AV_PIX_FMT_YUV420P && frame->format != AV_PIX_FMT_YUVJ420P)
    throw std::runtime_error("decoder produced a pixel format other than yuv420p");
  for (int y = 0; y < frame->height; ++y)
    std::fwrite(frame->data[0] + y * frame->linesize[0], 1, static_cast<size_t>(frame->width), out);
  for (int p = 1; p <= 2; ++p)
    for (int y = 0; y < frame->height / 2; ++y)
      std::fwrite(frame->data[p] + y * frame->linesize[p], 1, static_cast<size_t>(frame->width / 2), out);
}

void drain_frames(AVCodecContext* ctx, AVFrame* frame, std::FILE* out) {
  while (true) {
    const int rc = avcodec_receive_frame(ctx, frame);
    if (rc == AVERROR(EAGAIN) || rc == AVERROR_EOF) return;
    check_av(rc, "receive_frame");
    write_decoded(frame, out);
    av_frame_unref(frame);
  }
}

int run_decode(const std::string& input, const std::string& output) {
  const AVCodec* codec = avcodec_find_decoder(AV_CODEC_ID_HEVC);
  if (!codec) throw std::runtime_error("HEVC decoder not available in libavcodec");
  AVCodecParserContext* parser = av_parser_init(codec->id);
  if (!parser) throw std::runtime_error("cannot init HEVC parser");
  AVCodecContext* ctx = avcodec_alloc_context3(codec);
  check_av(avcodec_open2(ctx, codec, nullptr), "open HEVC decoder");

  FilePtr in = open_file(input, "rb");
  FilePtr out = open_file(output, "wb");
  AVFrame* frame = av_frame_alloc();
  AVPacket* pkt = av_packet_alloc();

  std::vector<uint8_t> buf(65536 + AV_INPUT_BUFFER_PADDING_SIZE, 0);
  while (true) {
    const size_t n = std::fread(buf.data(), 1, 65536, in.get());
    if (n == 0) break;
    const uint8_t* data = buf.data();
    size_t left = n;
    while (left > 0) {
      const int used = av_parser_parse2(parser, ctx, &pkt->data, &pkt->size, data,
                                        static_cast<int>(left), AV_NOPTS_VALUE, AV_NOPTS_VALUE, 0);
      check_av(used, "parse stream");
      data += used;
      left -= static_cast<size_t>(used);
      if (pkt->size > 0) {
        check_av(avcodec_send_packet(ctx, pkt), "send_packet");
        drain_frames(ctx, frame, out.get());
      }
    }
  }
  // Flush the parser, then the decoder.
  while (true) {
    const int used = av_parser_parse2(parser, ctx, &pkt->data, &pkt->size, nullptr, 0,
                                      AV_NOPTS_VALUE, AV_NOPTS_VALUE, 0);
    check_av(used, "flush parser");
    if (pkt->size <= 0) break;
    check_av(avcodec_send_packet(ctx, pkt), "send_packet");
    drain_frames(ctx, frame, out.get());
  }
  check_av(avcodec_send_packet(ctx, nullptr), "flush decoder");
  drain_frames(ctx, frame, out.get());

  av_packet_free(&pkt);
  av_frame_free(&frame);
  avcodec_free_context(&ctx);
  av_parser_close(parser);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HEVC encode/decode helper for raw planar 4:2:0 video"};
  app.require_subcommand(1);

  std::string input, output, geometry, preset = "medium";
  int bitrate_kbps = 1000, keyint = 250, refs = 3, deblock = 1, sao = 1;

  CLI::App* enc = app.add_subcommand("encode", "raw yuv420p -> Annex B HEVC");
  enc->add_option("--input", input)->required();
  enc->add_option("--geometry", geometry, "WxH@fps")->required();
  enc->add_option("--bitrate-kbps", bitrate_kbps)->required();
  enc->add_option("--preset", preset);
  enc->add_option("--keyint", keyint);
  enc->add_option("--refs", refs);
  enc->add_option("--deblock", deblock);
  enc->add_option("--sao", sao);
  enc->add_option("--output", output)->required();

  CLI::App* dec = app.add_subcommand("decode", "Annex B HEVC -> raw yuv420p");
  dec->add_option("--input", input)->required();
  dec->add_option("--output", output)->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (enc->parsed())
      return run_encode(input, geometry, bitrate_kbps, preset, keyint, refs, deblock, sao, output);
    return run_decode(input, output);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "tsan-codec: %s\n", e.what());
    return 1;
  }
}
