#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "mlp.hpp"
#include "tensor.hpp"

namespace edis {

/// Named-array container shared by every saved artifact.
///
/// Layout (all little-endian): "EDIS", u16 version, u32 array count, then per
/// array: u32 name length, UTF-8 name, u32 rank, u32 dims[rank], f32 data.
class Checkpoint {
public:
    static constexpr std::uint16_t kVersion = 1;

    void put(const std::string& name, const Matrix& t) { put(name, t.shape(), t.values()); }

    void put(const std::string& name, const Shape& shape, const std::vector<float>& data) {
        detail::require(shape_numel(shape) == data.size(), "checkpoint: array '" + name + "' shape/data mismatch");
        if (!index_.count(name)) order_.push_back(name);
        index_[name] = Matrix(shape, data);
    }

    void put_scalar(const std::string& name, double v) { put(name, Shape{1}, {static_cast<float>(v)}); }

    void put_mlp(const std::string& prefix, const Mlp<float>& net) {
        std::vector<float> widths(net.widths().begin(), net.widths().end());
        put(prefix + ".widths", Shape{widths.size()}, widths);
        put_scalar(prefix + ".residual", net.residual() ? 1.0 : 0.0);
        auto ps = net.parameters();
        for (std::size_t i = 0; i < ps.size(); ++i)
            put(prefix + (i % 2 ? ".b" : ".W") + std::to_string(i / 2), *ps[i]);
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    const Matrix& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw FormatError("checkpoint: missing array '" + name + "'");
        return it->second;
    }

    double scalar(const std::string& name) const {
        const Matrix& m = get(name);
        if (m.size() != 1) throw FormatError("checkpoint: '" + name + "' is not a scalar");
        return m[0];
    }

    Mlp<float> get_mlp(const std::string& prefix) const {
        const Matrix& w = get(prefix + ".widths");
        std::vector<std::size_t> widths;
        for (float v : w.values()) widths.push_back(static_cast<std::size_t>(v));
        Mlp<float> net(widths, scalar(prefix + ".residual") != 0.0);
        auto ps = net.parameters();
        for (std::size_t i = 0; i < ps.size(); ++i) {
            const Matrix& src = get(prefix + (i % 2 ? ".b" : ".W") + std::to_string(i / 2));
            if (src.shape() != ps[i]->shape())
                throw FormatError("checkpoint: '" + prefix + "' parameter " + std::to_string(i) + " has shape " +
                                  shape_str(src.shape()) + ", expected " + shape_str(ps[i]->shape()));
            *ps[i] = src;
        }
        return net;
    }

    const std::vector<std::string>& names() const noexcept { return order_; }

    void write(std::ostream& os) const {
        os.write("EDIS", 4);
        put_u16(os, kVersion);
        put_u32(os, static_cast<std::uint32_t>(order_.size()));
        for (const auto& name : order_) {
            const Matrix& t = index_.at(name);
            put_u32(os, static_cast<std::uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            put_u32(os, static_cast<std::uint32_t>(t.rank()));
            for (std::size_t d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
            for (float v : t.values()) put_u32(os, std::bit_cast<std::uint32_t>(v));
        }
        if (!os) throw Error("checkpoint: write failed");
    }

    static Checkpoint read(std::istream& is) {
        std::array<char, 4> magic{};
        is.read(magic.data(), 4);
        if (!is || std::memcmp(magic.data(), "EDIS", 4) != 0) throw FormatError("checkpoint: bad magic");
        const std::uint16_t version = get_u16(is);
        if (version != kVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
        Checkpoint ck;
        const std::uint32_t count = get_u32(is);
        for (std::uint32_t i = 0; i < count; ++i) {
            const std::uint32_t len = get_u32(is);
            if (len > (1u << 16)) throw FormatError("checkpoint: implausible name length");
            std::string name(len, '\0');
            is.read(name.data(), len);
            const std::uint32_t rank = get_u32(is);
            if (rank > 8) throw FormatError("checkpoint: implausible rank for '" + name + "'");
            Shape shape(rank);
            for (auto& d : shape) d = get_u32(is);
            const std::size_t n = shape_numel(shape);
            if (n > (std::size_t{1} << 30)) throw FormatError("checkpoint: implausible size for '" + name + "'");
            std::vector<float> data(n);
            for (auto& v : data) v = std::bit_cast<float>(get_u32(is));
            if (!is) throw FormatError("checkpoint: truncated array '" + name + "'");
            ck.put(name, shape, data);
        }
        return ck;
    }

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw ValidationError("cannot open '" + path + "' for writing");
        write(os);
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw ValidationError("cannot open checkpoint '" + path + "'");
        return read(is);
    }

private:
    static void put_u16(std::ostream& os, std::uint16_t v) {
        const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
        os.write(b, 2);
    }
    static void put_u32(std::ostream& os, std::uint32_t v) {
        char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        os.write(b, 4);
    }
    static std::uint16_t get_u16(std::istream& is) {
        unsigned char b[2] = {};
        is.read(reinterpret_cast<char*>(b), 2);
        if (!is) throw FormatError("checkpoint: truncated header");
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }
    static std::uint32_t get_u32(std::istream& is) {
        unsigned char b[4] = {};
        is.read(reinterpret_cast<char*>(b), 4);
        if (!is) throw FormatError("checkpoint: truncated data");
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }

    std::vector<std::string> order_;
    std::map<std::string, Matrix> index_;
};

}  // namespace edis
