#include "rae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace rae {

void ema_update(Tensor& ema, const Tensor& param, double beta) {
    if (!(beta >= 0.0 && beta <= 1.0)) throw ContractError("ema beta must lie in [0, 1]");
    if (!ema.same_shape(param)) throw ContractError("ema and parameter shapes differ");
    if (beta == 1.0) return;
    if (beta == 0.0) {
        ema = param;
        return;
    }
    const auto b = static_cast<float>(beta);
    const auto a = static_cast<float>(1.0 - beta);
    float* e = ema.data();
    const float* p = param.data();
    for (std::int64_t i = 0; i < ema.numel(); ++i) e[i] = b * e[i] + a * p[i];
}

void ema_update(std::vector<Tensor>& ema, const ParamList<float>& params, double beta) {
    if (ema.size() != params.size()) throw ContractError("ema holds a different number of tensors than the model");
    for (std::size_t i = 0; i < ema.size(); ++i) ema_update(ema[i], params[i].var.value(), beta);
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

namespace {

constexpr char kMagic[8] = {'R', 'A', 'E', 'C', 'K', 'P', 'T', '\0'};

template <typename U>
void put(std::string& out, U v) {
    using Raw = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::uint32_t>;
    const auto raw = std::bit_cast<Raw>(v);
    for (std::size_t k = 0; k < sizeof(U); ++k) out.push_back(static_cast<char>((raw >> (8 * k)) & 0xffu));
}

class Reader {
   public:
    explicit Reader(const std::string& data) : data_(data) {}
    std::size_t offset() const { return pos_; }
    bool done() const { return pos_ == data_.size(); }

    template <typename U>
    U get(const char* what) {
        need(sizeof(U), what);
        using Raw = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::uint32_t>;
        Raw raw = 0;
        for (std::size_t k = 0; k < sizeof(U); ++k)
            raw |= static_cast<Raw>(static_cast<unsigned char>(data_[pos_ + k])) << (8 * k);
        pos_ += sizeof(U);
        return std::bit_cast<U>(raw);
    }
    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    void need(std::size_t n, const char* what) const {
        if (data_.size() - pos_ < n) throw LoadError(std::string("checkpoint truncated in ") + what, pos_);
    }

   private:
    const std::string& data_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(ckpt.step));
    put<std::uint64_t>(out, ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto e : t.shape()) put<std::int64_t>(out, e);
        for (float v : t.storage()) put<float>(out, v);
    }
    put<std::uint64_t>(out, ckpt.config_text.size());
    out += ckpt.config_text;
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    Reader in(bytes);
    if (in.bytes(sizeof kMagic, "magic") != std::string(kMagic, sizeof kMagic)) throw LoadError("bad checkpoint magic", 0);
    const auto version_at = in.offset();
    const auto version = in.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw LoadError("unsupported checkpoint version " + std::to_string(version), version_at);
    }
    Checkpoint ckpt;
    ckpt.step = static_cast<std::int64_t>(in.get<std::uint64_t>("step"));
    const auto count = in.get<std::uint64_t>("tensor count");
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = in.get<std::uint32_t>("name length");
        std::string name = in.bytes(name_len, "tensor name");
        const auto rank_at = in.offset();
        const auto rank = in.get<std::uint32_t>("rank");
        if (rank > 8) throw LoadError("implausible tensor rank", rank_at);
        Shape shape;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const auto at = in.offset();
            const auto e = in.get<std::int64_t>("extent");
            if (e < 0) throw LoadError("negative extent", at);
            shape.push_back(e);
        }
        const auto numel = shape_numel(shape);
        in.need(static_cast<std::size_t>(numel) * 4, "tensor data");
        Tensor t(shape);
        for (auto& v : t.storage()) v = in.get<float>("tensor data");
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    const auto text_len = in.get<std::uint64_t>("config length");
    ckpt.config_text = in.bytes(text_len, "config text");
    if (!in.done()) throw LoadError("trailing bytes after checkpoint", in.offset());
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const std::string bytes = encode_checkpoint(ckpt);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return decode_checkpoint(buf.str());
}

}  // namespace rae
