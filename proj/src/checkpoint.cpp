#include "ircnn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

namespace ircnn {

namespace {

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int b = 0; b < 4; ++b) u8(static_cast<std::uint8_t>(v >> (8 * b)));
    }
    void u64(std::uint64_t v) {
        for (int b = 0; b < 8; ++b) u8(static_cast<std::uint8_t>(v >> (8 * b)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) {
        u64(s.size());
        out_ += s;
    }
    void raw(const char* p, std::size_t n) { out_.append(p, n); }
    std::string take() { return std::move(out_); }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(const std::string& in) : in_(in) {}

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(in_[pos_++]);
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int b = 0; b < 4; ++b) v |= std::uint32_t(u8()) << (8 * b);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int b = 0; b < 8; ++b) v |= std::uint64_t(u8()) << (8 * b);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint64_t n = u64();
        need(n);
        std::string s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string raw(std::size_t n) {
        need(n);
        std::string s = in_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == in_.size(); }

private:
    void need(std::uint64_t n) const {
        if (n > in_.size() - pos_) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    }
    const std::string& in_;
    std::size_t pos_ = 0;
};

void write_buffers(Writer& w, const std::map<std::string, std::vector<double>>& m) {
    w.u64(m.size());
    for (const auto& [name, buf] : m) {
        w.str(name);
        w.u64(buf.size());
        for (double v : buf) w.f64(v);
    }
}

std::map<std::string, std::vector<double>> read_buffers(Reader& r) {
    std::map<std::string, std::vector<double>> m;
    const std::uint64_t count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = r.str();
        std::vector<double> buf(r.u64());
        for (double& v : buf) v = r.f64();
        m.emplace(std::move(name), std::move(buf));
    }
    return m;
}

} // namespace

template <typename T>
std::string serialize_checkpoint(const Checkpoint<T>& ckpt) {
    Writer w;
    w.raw("IRCN", 4);
    w.u32(kCheckpointVersion);
    w.str(ckpt.config);
    w.u64(ckpt.epoch);

    w.u64(ckpt.params.size());
    for (const auto& [name, t] : ckpt.params) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.raw(name.data(), name.size());
        w.u8(static_cast<std::uint8_t>(dtype_of<T>));
        const Shape s = t.shape();
        for (std::size_t d : {s.n, s.c, s.h, s.w}) w.u64(d);
        for (T v : t.values()) {
            if constexpr (std::is_same_v<T, float>) {
                w.f32(v);
            } else {
                w.f64(v);
            }
        }
    }

    const OptimizerState& o = ckpt.optimizer;
    w.u64(o.t);
    w.f64(o.d);
    w.f64(o.prev_loss);
    w.f64(o.last_lr);
    write_buffers(w, o.velocity);
    write_buffers(w, o.m);
    write_buffers(w, o.v);

    w.u64(ckpt.norm.mean.size());
    for (double v : ckpt.norm.mean) w.f64(v);
    for (double v : ckpt.norm.std) w.f64(v);

    w.u64(ckpt.rng.size());
    for (const auto& [name, state] : ckpt.rng) {
        w.str(name);
        w.str(state);
    }
    return w.take();
}

template <typename T>
Checkpoint<T> deserialize_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    const std::string magic = r.raw(4);
    if (magic != "IRCN") throw FormatError("not a checkpoint (magic '" + magic + "')");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint<T> c;
    c.config = r.str();
    c.epoch = r.u64();

    const std::uint64_t count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string name = r.raw(r.u32());
        const std::uint8_t tag = r.u8();
        if (tag != static_cast<std::uint8_t>(dtype_of<T>)) {
            throw FormatError("tensor '" + name + "' has dtype tag " + std::to_string(tag) + ", expected " +
                              std::string(dtype_name(dtype_of<T>)));
        }
        Shape s;
        s.n = r.u64();
        s.c = r.u64();
        s.h = r.u64();
        s.w = r.u64();
        Tensor<T> t(s);
        for (T& v : t.values()) {
            if constexpr (std::is_same_v<T, float>) {
                v = r.f32();
            } else {
                v = r.f64();
            }
        }
        c.params.emplace(name, std::move(t));
    }

    OptimizerState& o = c.optimizer;
    o.t = r.u64();
    o.d = r.f64();
    o.prev_loss = r.f64();
    o.last_lr = r.f64();
    o.velocity = read_buffers(r);
    o.m = read_buffers(r);
    o.v = read_buffers(r);

    const std::uint64_t channels = r.u64();
    c.norm.mean.resize(channels);
    c.norm.std.resize(channels);
    for (double& v : c.norm.mean) v = r.f64();
    for (double& v : c.norm.std) v = r.f64();

    const std::uint64_t rngs = r.u64();
    for (std::uint64_t i = 0; i < rngs; ++i) {
        std::string name = r.str();
        c.rng.emplace(std::move(name), r.str());
    }
    if (!r.done()) throw FormatError("trailing bytes after checkpoint payload");
    return c;
}

template <typename T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ckpt) {
    const std::string bytes = serialize_checkpoint(ckpt);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write '" + tmp + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("short write to '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint<T>(bytes);
}

#define IRCNN_INSTANTIATE_CKPT(T)                                                     \
    template std::string serialize_checkpoint<T>(const Checkpoint<T>&);               \
    template Checkpoint<T> deserialize_checkpoint<T>(const std::string&);             \
    template void save_checkpoint<T>(const std::string&, const Checkpoint<T>&);       \
    template Checkpoint<T> load_checkpoint<T>(const std::string&);

IRCNN_INSTANTIATE_CKPT(float)
IRCNN_INSTANTIATE_CKPT(double)

#undef IRCNN_INSTANTIATE_CKPT

} // namespace ircnn
