#pragma once

// Checkpoint file, all integers and reals little-endian:
//
//   "NBRSEGCK"                     8-byte magic
//   u32 version                    currently 1
//   u64 n, n bytes                 config text (key = value lines)
//   u64 step                       optimizer steps taken
//   u64 adam_steps
//   u32 count, then per parameter: u32 len, name, u64 rows, u64 cols, rows·cols f64
//   u32 count, then per moment:    u32 len, name, u64 rows, u64 cols,
//                                  rows·cols f64 (first), rows·cols f64 (second)
//   "END!"
//
// Files are written to a temporary sibling and renamed into place.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "config.hpp"
#include "diffcore.hpp"
#include "error.hpp"
#include "model.hpp"

namespace nbrseg {

inline constexpr std::uint32_t checkpoint_version = 1;

struct CheckpointData {
    std::uint32_t version = checkpoint_version;
    std::string config_text;
    std::uint64_t step = 0;
    std::uint64_t adam_steps = 0;
    std::map<std::string, Matrix<double>> params;
    std::map<std::string, std::pair<Matrix<double>, Matrix<double>>> moments;

    std::pair<ModelConfig, TrainConfig> configs() const {
        std::istringstream in(config_text);
        ModelConfig m;
        TrainConfig t;
        apply_config(KeyValueConfig::parse(in, "checkpoint config"), m, t);
        return {m, t};
    }
};

namespace detail {

class ByteWriter {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(char((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(char((v >> (8 * i)) & 0xff));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(const std::string& s) { buf_ += s; }
    void str32(const std::string& s) {
        u32(std::uint32_t(s.size()));
        bytes(s);
    }
    void matrix(const Matrix<double>& m, bool with_shape = true) {
        if (with_shape) {
            u64(m.rows());
            u64(m.cols());
        }
        for (double v : m.data()) f64(v);
    }
    const std::string& data() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string data, std::string source) : d_(std::move(data)), src_(std::move(source)) {}

    std::uint64_t uint(int width) {
        need(std::size_t(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) v |= std::uint64_t(static_cast<unsigned char>(d_[pos_ + i])) << (8 * i);
        pos_ += std::size_t(width);
        return v;
    }
    std::uint32_t u32() { return std::uint32_t(uint(4)); }
    std::uint64_t u64() { return uint(8); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = d_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string str32() { return bytes(u32()); }
    Matrix<double> matrix(std::size_t rows, std::size_t cols) {
        if (cols != 0 && rows > (d_.size() - pos_) / 8 / cols) fail("matrix larger than file");
        Matrix<double> m(rows, cols);
        for (auto& v : m.data()) v = f64();
        return m;
    }
    bool at_end() const { return pos_ == d_.size(); }
    [[noreturn]] void fail(const std::string& why) const {
        throw ValidationError("checkpoint " + src_ + ": " + why);
    }

private:
    void need(std::size_t n) const {
        if (d_.size() - pos_ < n) fail("truncated file");
    }
    std::string d_;
    std::string src_;
    std::size_t pos_ = 0;
};

inline void write_file_atomic(const std::filesystem::path& path, const std::string& data) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ValidationError("cannot write " + tmp.string());
        out.write(data.data(), std::streamsize(data.size()));
        if (!out) throw ValidationError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

} // namespace detail

inline std::string serialize_checkpoint(const CheckpointData& c) {
    detail::ByteWriter w;
    w.bytes("NBRSEGCK");
    w.u32(c.version);
    w.u64(c.config_text.size());
    w.bytes(c.config_text);
    w.u64(c.step);
    w.u64(c.adam_steps);
    w.u32(std::uint32_t(c.params.size()));
    for (const auto& [name, m] : c.params) {
        w.str32(name);
        w.matrix(m);
    }
    w.u32(std::uint32_t(c.moments.size()));
    for (const auto& [name, mv] : c.moments) {
        w.str32(name);
        w.matrix(mv.first);
        w.matrix(mv.second, false);
    }
    w.bytes("END!");
    return w.data();
}

inline CheckpointData deserialize_checkpoint(std::string bytes, const std::string& source = "<memory>") {
    detail::ByteReader r(std::move(bytes), source);
    if (r.bytes(8) != "NBRSEGCK") r.fail("bad magic");
    CheckpointData c;
    c.version = r.u32();
    if (c.version != checkpoint_version)
        r.fail("unsupported version " + std::to_string(c.version) + " (this build reads version " +
               std::to_string(checkpoint_version) + ")");
    c.config_text = r.bytes(r.u64());
    c.step = r.u64();
    c.adam_steps = r.u64();
    const std::uint32_t np = r.u32();
    for (std::uint32_t i = 0; i < np; ++i) {
        std::string name = r.str32();
        const auto rows = r.u64(), cols = r.u64();
        c.params[name] = r.matrix(rows, cols);
    }
    const std::uint32_t nm = r.u32();
    for (std::uint32_t i = 0; i < nm; ++i) {
        std::string name = r.str32();
        const auto rows = r.u64(), cols = r.u64();
        auto first = r.matrix(rows, cols);
        auto second = r.matrix(rows, cols);
        c.moments[name] = {std::move(first), std::move(second)};
    }
    if (r.bytes(4) != "END!") r.fail("missing end marker");
    if (!r.at_end()) r.fail("trailing bytes");
    return c;
}

inline void write_checkpoint(const std::filesystem::path& path, const CheckpointData& c) {
    detail::write_file_atomic(path, serialize_checkpoint(c));
}

inline CheckpointData read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint(ss.str(), path.string());
}

template <class T>
CheckpointData make_checkpoint(const Model<T>& model, const TrainConfig& train, const Adam<T>* opt = nullptr,
                               std::uint64_t step = 0) {
    CheckpointData c;
    c.config_text = to_config_text(model.config(), train);
    c.step = step;
    for (const Param<T>* p : model.params().all()) {
        Matrix<double> m(p->value.rows(), p->value.cols());
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = double(p->value.data()[i]);
        c.params[p->name] = std::move(m);
    }
    if (opt) {
        c.adam_steps = opt->steps();
        for (const auto& [name, mo] : opt->moments()) {
            Matrix<double> a(mo.first.rows(), mo.first.cols()), b(mo.second.rows(), mo.second.cols());
            for (std::size_t i = 0; i < a.size(); ++i) {
                a.data()[i] = double(mo.first.data()[i]);
                b.data()[i] = double(mo.second.data()[i]);
            }
            c.moments[name] = {std::move(a), std::move(b)};
        }
    }
    return c;
}

/// Copies stored parameters into `model`; names and shapes must match exactly.
template <class T>
void load_parameters(Model<T>& model, const CheckpointData& c) {
    auto params = model.params().all();
    if (params.size() != c.params.size())
        throw ValidationError("checkpoint holds " + std::to_string(c.params.size()) + " parameters, model has " +
                              std::to_string(params.size()));
    for (Param<T>* p : params) {
        auto it = c.params.find(p->name);
        if (it == c.params.end()) throw ValidationError("checkpoint lacks parameter " + p->name);
        if (!it->second.same_shape(p->value))
            throw ValidationError("checkpoint parameter " + p->name + " has shape " + it->second.shape_str() +
                                  ", expected " + p->value.shape_str());
    }
    for (Param<T>* p : params) {
        p->value = convert_matrix<T>(c.params.at(p->name));
        p->zero_grad();
    }
}

template <class T>
void load_optimizer(Adam<T>& opt, const CheckpointData& c) {
    opt.set_steps(c.adam_steps);
    opt.moments().clear();
    for (const auto& [name, mv] : c.moments)
        opt.moments()[name] = {convert_matrix<T>(mv.first), convert_matrix<T>(mv.second)};
}

template <class T>
Model<T> model_from_checkpoint(const CheckpointData& c) {
    Model<T> model(c.configs().first);
    load_parameters(model, c);
    return model;
}

} // namespace nbrseg
