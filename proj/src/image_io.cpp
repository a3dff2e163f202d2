#include "crispdepth/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <vector>

#include "crispdepth/common.hpp"

namespace crisp::io {

namespace fs = std::filesystem;

void atomic_write_bytes(const fs::path& path, const void* data, size_t nbytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    FILE* f = std::fopen(tmp.string().c_str(), "wb");
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    const size_t written = nbytes ? std::fwrite(data, 1, nbytes, f) : 0;
    const bool ok = written == nbytes && std::fclose(f) == 0;
    if (!ok) {
        fs::remove(tmp);
        throw IoError("short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("rename failed for " + path.string() + ": " + ec.message());
    }
}

void atomic_write_text(const fs::path& path, const std::string& text) {
    atomic_write_bytes(path, text.data(), text.size());
}

namespace {

struct PngMem {
    std::vector<unsigned char> bytes;
};

void png_mem_write(png_structp png, png_bytep data, png_size_t n) {
    auto* mem = static_cast<PngMem*>(png_get_io_ptr(png));
    mem->bytes.insert(mem->bytes.end(), data, data + n);
}

void png_mem_flush(png_structp) {}

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* file = nullptr;

    ~PngReader() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (file) std::fclose(file);
    }
};

void open_png(PngReader& r, const fs::path& path) {
    r.file = std::fopen(path.string().c_str(), "rb");
    if (!r.file) throw IoError("cannot open " + path.string());
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, r.file) != 8 || png_sig_cmp(sig, 0, 8))
        throw IoError(path.string() + " is not a PNG file");
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    r.info = png_create_info_struct(r.png);
    if (!r.png || !r.info) throw IoError("libpng init failed");
    if (setjmp(png_jmpbuf(r.png))) throw IoError("libpng failed reading " + path.string());
    png_init_io(r.png, r.file);
    png_set_sig_bytes(r.png, 8);
    png_read_info(r.png, r.info);
}

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;

    ~PngWriter() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    }
};

}  // namespace

Tensor read_image_png(const fs::path& path) {
    PngReader r;
    open_png(r, path);
    if (setjmp(png_jmpbuf(r.png))) throw IoError("libpng failed reading " + path.string());
    const int w = png_get_image_width(r.png, r.info);
    const int h = png_get_image_height(r.png, r.info);
    const int bit_depth = png_get_bit_depth(r.png, r.info);
    const int color = png_get_color_type(r.png, r.info);

    if (bit_depth == 16) png_set_strip_16(r.png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(r.png);
    png_set_strip_alpha(r.png);
    png_read_update_info(r.png, r.info);

    std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
    Tensor out(1, 3, h, w);
    for (int y = 0; y < h; ++y) {
        png_read_row(r.png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(0, c, y, x) = row[x * 3 + c] / 255.0f;
    }
    return out;
}

void write_image_png(const fs::path& path, const Tensor& image) {
    if (image.c() != 3) throw IoError("write_image_png expects (1,3,H,W)");
    const int h = image.h(), w = image.w();
    PngMem mem;
    PngWriter wr;
    wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    wr.info = png_create_info_struct(wr.png);
    if (!wr.png || !wr.info) throw IoError("libpng init failed");
    if (setjmp(png_jmpbuf(wr.png))) throw IoError("libpng failed writing " + path.string());
    png_set_write_fn(wr.png, &mem, png_mem_write, png_mem_flush);
    png_set_IHDR(wr.png, wr.info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wr.png, wr.info);
    std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = std::clamp(image.at(0, c, y, x), 0.0f, 1.0f);
                row[x * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        png_write_row(wr.png, row.data());
    }
    png_write_end(wr.png, nullptr);
    atomic_write_bytes(path, mem.bytes.data(), mem.bytes.size());
}

Tensor read_depth_png(const fs::path& path) {
    PngReader r;
    open_png(r, path);
    if (setjmp(png_jmpbuf(r.png))) throw IoError("libpng failed reading " + path.string());
    const int w = png_get_image_width(r.png, r.info);
    const int h = png_get_image_height(r.png, r.info);
    const int bit_depth = png_get_bit_depth(r.png, r.info);
    const int color = png_get_color_type(r.png, r.info);
    if (bit_depth != 16 || color != PNG_COLOR_TYPE_GRAY)
        throw IoError("depth PNG must be 16-bit grayscale, got " +
                      std::to_string(bit_depth) + "-bit color type " +
                      std::to_string(color) + " in " + path.string());
    png_set_swap(r.png);  // stored big-endian
    png_read_update_info(r.png, r.info);

    std::vector<uint16_t> row(static_cast<size_t>(w));
    Tensor out(1, 1, h, w);
    for (int y = 0; y < h; ++y) {
        png_read_row(r.png, reinterpret_cast<png_bytep>(row.data()), nullptr);
        for (int x = 0; x < w; ++x)
            out.at(0, 0, y, x) = row[x] / 1000.0f;  // millimeters to meters
    }
    return out;
}

void write_depth_png(const fs::path& path, const Tensor& depth) {
    if (depth.c() != 1) throw IoError("write_depth_png expects (1,1,H,W)");
    const int h = depth.h(), w = depth.w();
    PngMem mem;
    PngWriter wr;
    wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    wr.info = png_create_info_struct(wr.png);
    if (!wr.png || !wr.info) throw IoError("libpng init failed");
    if (setjmp(png_jmpbuf(wr.png))) throw IoError("libpng failed writing " + path.string());
    png_set_write_fn(wr.png, &mem, png_mem_write, png_mem_flush);
    png_set_IHDR(wr.png, wr.info, w, h, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wr.png, wr.info);
    png_set_swap(wr.png);
    std::vector<uint16_t> row(static_cast<size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double mm = std::clamp(
                static_cast<double>(depth.at(0, 0, y, x)) * 1000.0, 0.0, 65535.0);
            row[x] = static_cast<uint16_t>(std::lround(mm));
        }
        png_write_row(wr.png, reinterpret_cast<png_bytep>(row.data()));
    }
    png_write_end(wr.png, nullptr);
    atomic_write_bytes(path, mem.bytes.data(), mem.bytes.size());
}

Tensor read_mask_png(const fs::path& path) {
    PngReader r;
    open_png(r, path);
    if (setjmp(png_jmpbuf(r.png))) throw IoError("libpng failed reading " + path.string());
    const int w = png_get_image_width(r.png, r.info);
    const int h = png_get_image_height(r.png, r.info);
    const int bit_depth = png_get_bit_depth(r.png, r.info);
    const int color = png_get_color_type(r.png, r.info);
    if (bit_depth != 8 || color != PNG_COLOR_TYPE_GRAY)
        throw IoError("mask PNG must be 8-bit grayscale: " + path.string());
    png_read_update_info(r.png, r.info);
    std::vector<unsigned char> row(static_cast<size_t>(w));
    Tensor out(1, 1, h, w);
    for (int y = 0; y < h; ++y) {
        png_read_row(r.png, row.data(), nullptr);
        for (int x = 0; x < w; ++x) out.at(0, 0, y, x) = static_cast<float>(row[x]);
    }
    return out;
}

void write_mask_png(const fs::path& path, const Tensor& mask) {
    if (mask.c() != 1) throw IoError("write_mask_png expects (1,1,H,W)");
    const int h = mask.h(), w = mask.w();
    PngMem mem;
    PngWriter wr;
    wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    wr.info = png_create_info_struct(wr.png);
    if (!wr.png || !wr.info) throw IoError("libpng init failed");
    if (setjmp(png_jmpbuf(wr.png))) throw IoError("libpng failed writing " + path.string());
    png_set_write_fn(wr.png, &mem, png_mem_write, png_mem_flush);
    png_set_IHDR(wr.png, wr.info, w, h, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(wr.png, wr.info);
    std::vector<unsigned char> row(static_cast<size_t>(w));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            row[x] = static_cast<unsigned char>(
                std::clamp(std::lround(mask.at(0, 0, y, x)), 0l, 255l));
        png_write_row(wr.png, row.data());
    }
    png_write_end(wr.png, nullptr);
    atomic_write_bytes(path, mem.bytes.data(), mem.bytes.size());
}

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
    const int C = image.c(), H = image.h(), W = image.w();
    if (out_h == H && out_w == W) return image;
    Tensor out(1, C, out_h, out_w);
    const double sy = static_cast<double>(H) / out_h;
    const double sx = static_cast<double>(W) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
        const int y0 = std::min(static_cast<int>(fy), H - 1);
        const int y1 = std::min(y0 + 1, H - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
            const int x0 = std::min(static_cast<int>(fx), W - 1);
            const int x1 = std::min(x0 + 1, W - 1);
            const double wx = fx - x0;
            for (int c = 0; c < C; ++c) {
                const double v = (1 - wy) * ((1 - wx) * image.at(0, c, y0, x0) +
                                             wx * image.at(0, c, y0, x1)) +
                                 wy * ((1 - wx) * image.at(0, c, y1, x0) +
                                       wx * image.at(0, c, y1, x1));
                out.at(0, c, y, x) = static_cast<float>(v);
            }
        }
    }
    return out;
}

Tensor resize_nearest(const Tensor& map, int out_h, int out_w) {
    const int C = map.c(), H = map.h(), W = map.w();
    if (out_h == H && out_w == W) return map;
    Tensor out(1, C, out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        const int sy = std::min(static_cast<int>((y + 0.5) * H / out_h), H - 1);
        for (int x = 0; x < out_w; ++x) {
            const int sx = std::min(static_cast<int>((x + 0.5) * W / out_w), W - 1);
            for (int c = 0; c < C; ++c) out.at(0, c, y, x) = map.at(0, c, sy, sx);
        }
    }
    return out;
}

}  // namespace crisp::io
