#include "iamnn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace iamnn {

namespace {

constexpr char kMagic[4] = {'I', 'A', 'M', 'N'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
void put_values(std::string& out, std::span<const T> values) {
    static_assert(std::endian::native == std::endian::little,
                  "checkpoint writer assumes a little-endian host");
    const char* raw = reinterpret_cast<const char*>(values.data());
    out.append(raw, raw + values.size() * sizeof(T));
}

void put_str(std::string& out, const std::string& s) {
    put_u32(out, static_cast<uint32_t>(s.size()));
    out.append(s);
}

class Cursor {
public:
    Cursor(const char* data, size_t size) : data_(data), size_(size) {}

    void need(size_t n) const {
        if (pos_ + n > size_) {
            throw CheckpointError(CheckpointError::Kind::Truncated,
                                  "checkpoint truncated at byte " + std::to_string(pos_));
        }
    }

    void read_raw(void* dst, size_t n) {
        need(n);
        std::memcpy(dst, data_ + pos_, n);
        pos_ += n;
    }

    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(data_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(data_[pos_++]);
    }

    std::string str() {
        const uint32_t n = u32();
        need(n);
        std::string s(data_ + pos_, n);
        pos_ += n;
        return s;
    }

private:
    const char* data_;
    size_t size_;
    size_t pos_ = 0;
};

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const NetConfig& cfg, const ParamStore<T>& store,
                     const Optimizer<T>* opt, int64_t step, const std::string& rng_state) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    out.push_back(static_cast<char>(sizeof(T)));
    put_str(out, cfg.canonical());
    put_u64(out, static_cast<uint64_t>(step));
    put_str(out, rng_state);

    put_u32(out, static_cast<uint32_t>(store.entries().size()));
    for (const auto& e : store.entries()) {
        put_str(out, e.name);
        put_u32(out, static_cast<uint32_t>(e.tensor.rank()));
        for (int64_t d : e.tensor.shape()) put_u64(out, static_cast<uint64_t>(d));
        put_u64(out, static_cast<uint64_t>(e.tensor.numel()));
        put_values<T>(out, e.tensor.values());
    }

    if (opt) {
        out.push_back(1);
        out.push_back(static_cast<char>(opt->kind == OptKind::Adam ? 1 : 0));
        put_u64(out, static_cast<uint64_t>(opt->t));
        uint32_t n_bufs = 0;
        for (const auto& [name, bufs] : opt->slots) n_bufs += static_cast<uint32_t>(bufs.size());
        put_u32(out, n_bufs);
        // Deterministic order: follow the store's registration order.
        for (const auto& e : store.entries()) {
            auto it = opt->slots.find(e.name);
            if (it == opt->slots.end()) continue;
            for (size_t s = 0; s < it->second.size(); ++s) {
                put_str(out, e.name);
                out.push_back(static_cast<char>(s));
                put_u64(out, it->second[s].size());
                put_values<T>(out, std::span<const T>(it->second[s]));
            }
        }
    } else {
        out.push_back(0);
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ContractError("cannot write checkpoint " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

template <typename T>
CheckpointMeta load_checkpoint(const std::string& path, const NetConfig& cfg, ParamStore<T>& store,
                               Optimizer<T>* opt) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw CheckpointError(CheckpointError::Kind::Truncated, "cannot open checkpoint " + path);
    }
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Cursor cur(bytes.data(), bytes.size());

    char magic[4];
    cur.read_raw(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw CheckpointError(CheckpointError::Kind::BadMagic,
                              path + ": bad magic, not a checkpoint file");
    }
    const uint32_t version = cur.u32();
    if (version != kVersion) {
        throw CheckpointError(CheckpointError::Kind::BadVersion,
                              path + ": unsupported version " + std::to_string(version));
    }
    const uint8_t scalar_size = cur.u8();
    if (scalar_size != sizeof(T)) {
        throw CheckpointError(CheckpointError::Kind::BadDType,
                              path + ": stored scalar size " + std::to_string(scalar_size) +
                                  " does not match " + std::to_string(sizeof(T)));
    }
    const std::string stored_cfg = cur.str();
    if (stored_cfg != cfg.canonical()) {
        throw CheckpointError(CheckpointError::Kind::ConfigMismatch,
                              path + ": checkpoint was written for a different configuration");
    }
    CheckpointMeta meta;
    meta.step = static_cast<int64_t>(cur.u64());
    meta.rng_state = cur.str();

    // Stage everything before mutating the store.
    struct Staged {
        std::string name;
        std::vector<int64_t> shape;
        std::vector<T> values;
    };
    std::vector<Staged> staged;
    const uint32_t n_tensors = cur.u32();
    for (uint32_t i = 0; i < n_tensors; ++i) {
        Staged s;
        s.name = cur.str();
        const uint32_t rank = cur.u32();
        for (uint32_t r = 0; r < rank; ++r) s.shape.push_back(static_cast<int64_t>(cur.u64()));
        const uint64_t count = cur.u64();
        s.values.resize(count);
        cur.read_raw(s.values.data(), count * sizeof(T));
        staged.push_back(std::move(s));
    }

    struct StagedSlot {
        std::string name;
        uint8_t slot;
        std::vector<T> values;
    };
    std::vector<StagedSlot> staged_slots;
    OptKind staged_kind = OptKind::SgdMomentum;
    uint64_t staged_t = 0;
    const uint8_t has_opt = cur.u8();
    if (has_opt) {
        staged_kind = cur.u8() ? OptKind::Adam : OptKind::SgdMomentum;
        staged_t = cur.u64();
        const uint32_t n_bufs = cur.u32();
        for (uint32_t i = 0; i < n_bufs; ++i) {
            StagedSlot s;
            s.name = cur.str();
            s.slot = cur.u8();
            const uint64_t count = cur.u64();
            s.values.resize(count);
            cur.read_raw(s.values.data(), count * sizeof(T));
            staged_slots.push_back(std::move(s));
        }
    }

    for (const auto& s : staged) {
        if (!store.contains(s.name)) {
            throw CheckpointError(CheckpointError::Kind::MissingTensor,
                                  path + ": tensor '" + s.name + "' not present in this network");
        }
        Tensor<T>& dst = store.get(s.name);
        if (dst.shape() != s.shape ||
            static_cast<uint64_t>(dst.numel()) != s.values.size()) {
            throw CheckpointError(CheckpointError::Kind::ShapeMismatch,
                                  path + ": tensor '" + s.name + "' has shape " +
                                      shape_str(s.shape) + ", expected " + shape_str(dst.shape()));
        }
    }

    // Commit.
    for (const auto& s : staged) {
        Tensor<T>& dst = store.get(s.name);
        std::copy(s.values.begin(), s.values.end(), dst.values().begin());
    }
    if (opt && has_opt) {
        opt->kind = staged_kind;
        opt->t = static_cast<int64_t>(staged_t);
        opt->slots.clear();
        for (auto& s : staged_slots) {
            auto& bufs = opt->slots[s.name];
            if (bufs.size() <= s.slot) bufs.resize(s.slot + 1);
            bufs[s.slot] = std::move(s.values);
        }
    }
    return meta;
}

template void save_checkpoint<float>(const std::string&, const NetConfig&, const ParamStore<float>&,
                                     const Optimizer<float>*, int64_t, const std::string&);
template void save_checkpoint<double>(const std::string&, const NetConfig&,
                                      const ParamStore<double>&, const Optimizer<double>*, int64_t,
                                      const std::string&);
template CheckpointMeta load_checkpoint<float>(const std::string&, const NetConfig&,
                                               ParamStore<float>&, Optimizer<float>*);
template CheckpointMeta load_checkpoint<double>(const std::string&, const NetConfig&,
                                                ParamStore<double>&, Optimizer<double>*);

}  // namespace iamnn
