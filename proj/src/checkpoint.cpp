#include "crispdepth/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "crispdepth/common.hpp"
#include "crispdepth/image_io.hpp"

namespace crisp {

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'C', 'R', 'S', 'P', 'C', 'K', 'P', '1'};

void append_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t read_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

void append_tensor(std::string& buf, const Tensor& t) {
    const size_t nbytes = static_cast<size_t>(t.size()) * sizeof(float);
    const size_t off = buf.size();
    buf.resize(off + nbytes);
    std::memcpy(buf.data() + off, t.data(), nbytes);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& ckpt) {
    json header;
    header["format"] = 1;
    header["task"] = ckpt.task;
    header["stage"] = ckpt.stage;
    header["step"] = ckpt.step;
    header["rng"] = ckpt.rng_state;
    header["config"] = ckpt.config;
    header["has_adam"] = ckpt.has_adam;
    header["adam_step"] = ckpt.adam_step;
    json table = json::array();
    for (const auto& [name, t] : ckpt.tensors)
        table.push_back({{"name", name}, {"shape", {t.n(), t.c(), t.h(), t.w()}}});
    header["tensors"] = table;
    const std::string header_text = header.dump();

    std::string buf;
    buf.append(kMagic, 8);
    append_u64(buf, header_text.size());
    buf += header_text;
    for (const auto& [name, t] : ckpt.tensors) append_tensor(buf, t);
    if (ckpt.has_adam) {
        if (ckpt.adam_m.size() != ckpt.tensors.size() ||
            ckpt.adam_v.size() != ckpt.tensors.size())
            throw Error("optimizer state does not match the tensor table");
        for (const Tensor& t : ckpt.adam_m) append_tensor(buf, t);
        for (const Tensor& t : ckpt.adam_v) append_tensor(buf, t);
    }
    io::atomic_write_bytes(path, buf.data(), buf.size());
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError(path.string() + " is not a checkpoint file");
    const uint64_t hlen = read_u64(in);
    std::string header_text(hlen, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw IoError("truncated checkpoint header in " + path.string());

    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception& e) {
        throw IoError("corrupt checkpoint header: " + std::string(e.what()));
    }
    if (header.value("format", 0) != 1)
        throw IoError("unsupported checkpoint format in " + path.string());

    CheckpointData ckpt;
    ckpt.task = header.at("task").get<std::string>();
    ckpt.stage = header.at("stage").get<int>();
    ckpt.step = header.at("step").get<int64_t>();
    ckpt.rng_state = header.at("rng").get<std::string>();
    ckpt.config = header.at("config");
    ckpt.has_adam = header.at("has_adam").get<bool>();
    ckpt.adam_step = header.at("adam_step").get<int64_t>();

    auto read_tensor = [&](int n, int c, int h, int w) {
        Tensor t(n, c, h, w);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(float)));
        if (!in) throw IoError("truncated checkpoint payload in " + path.string());
        return t;
    };
    for (const json& e : header.at("tensors")) {
        const auto& s = e.at("shape");
        ckpt.tensors.emplace_back(e.at("name").get<std::string>(),
                                  read_tensor(s[0], s[1], s[2], s[3]));
    }
    if (ckpt.has_adam) {
        for (const auto& [name, t] : ckpt.tensors)
            ckpt.adam_m.push_back(read_tensor(t.n(), t.c(), t.h(), t.w()));
        for (const auto& [name, t] : ckpt.tensors)
            ckpt.adam_v.push_back(read_tensor(t.n(), t.c(), t.h(), t.w()));
    }
    return ckpt;
}

}  // namespace crisp
