#include "rdet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace rdet::model {

namespace {

constexpr char kMagic[8] = {'R', 'D', 'E', 'T', 'C', 'K', 'P', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& os, double v) {
    const std::uint64_t u = std::bit_cast<std::uint64_t>(v);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((u >> (8 * i)) & 0xff);
    os.write(b, 8);
}

double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("checkpoint: truncated tensor payload");
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(u);
}

}  // namespace

void save_checkpoint(const std::string& path, const Decoder& dec) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    os.write(kMagic, 8);

    const DecoderConfig& c = dec.config();
    nlohmann::json header{{"d", c.d},           {"heads", c.heads},
                          {"layers", c.layers}, {"k_points", c.k_points},
                          {"classes", c.classes}, {"ffn", c.ffn},
                          {"grid", c.grid},     {"n_queries", c.n_queries}};
    const std::string hs = header.dump();
    put_u32(os, static_cast<std::uint32_t>(hs.size()));
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));

    const auto& params = dec.params();
    put_u32(os, static_cast<std::uint32_t>(params.size()));
    for (size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.names[i];
        put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        const nn::Mat& t = params.values[i];
        put_u32(os, static_cast<std::uint32_t>(t.rows));
        put_u32(os, static_cast<std::uint32_t>(t.cols));
        for (double v : t.d) put_f64(os, v);
    }
    if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

Decoder load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);

    const std::uint32_t hlen = get_u32(is);
    std::string hs(hlen, '\0');
    is.read(hs.data(), hlen);
    if (!is) throw std::runtime_error("checkpoint: truncated header");
    const nlohmann::json header = nlohmann::json::parse(hs);
    DecoderConfig cfg;
    cfg.d = header.at("d");
    cfg.heads = header.at("heads");
    cfg.layers = header.at("layers");
    cfg.k_points = header.at("k_points");
    cfg.classes = header.at("classes");
    cfg.ffn = header.at("ffn");
    cfg.grid = header.at("grid");
    cfg.n_queries = header.at("n_queries");

    Decoder dec(cfg, 0);
    auto& params = dec.params();
    const std::uint32_t count = get_u32(is);
    if (count != params.size())
        throw std::runtime_error("checkpoint: tensor count mismatch in " + path);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t nlen = get_u32(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        const std::uint32_t rows = get_u32(is);
        const std::uint32_t cols = get_u32(is);
        if (name != params.names[i] || static_cast<int>(rows) != params.values[i].rows ||
            static_cast<int>(cols) != params.values[i].cols)
            throw std::runtime_error("checkpoint: tensor layout mismatch at " + name);
        for (double& v : params.values[i].d) v = get_f64(is);
    }
    return dec;
}

}  // namespace rdet::model
