// SPDX-License-Identifier: Apache-2.0
#include "gaitssl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "gaitssl/config.hpp"
#include "gaitssl/errors.hpp"

namespace gaitssl {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'G', 'A', 'I', 'T', 'C', 'K', 'P', 'T'};

class Writer {
public:
    template <typename U>
    void put(U value) {
        const char* p = reinterpret_cast<const char*>(&value);
        bytes.insert(bytes.end(), p, p + sizeof(U));
    }
    void put_bytes(const void* data, std::size_t n) {
        const char* p = static_cast<const char*>(data);
        bytes.insert(bytes.end(), p, p + n);
    }
    void put_array(const std::string& name, const NamedArray<float>& a) {
        put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
        put_bytes(name.data(), name.size());
        put<std::uint32_t>(static_cast<std::uint32_t>(a.shape.size()));
        for (auto d : a.shape) put<std::uint64_t>(d);
        put_bytes(a.values.data(), a.values.size() * sizeof(float));
    }
    std::vector<char> bytes;
};

class Reader {
public:
    Reader(const std::vector<char>& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

    void take(void* out, std::size_t n) {
        if (pos_ + n > bytes_.size()) fail("truncated file");
        std::memcpy(out, bytes_.data() + pos_, n);
        pos_ += n;
    }
    template <typename U>
    U get() {
        U v;
        take(&v, sizeof(U));
        return v;
    }
    std::string get_string(std::size_t n) {
        std::string s(n, '\0');
        take(s.data(), n);
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }
    [[noreturn]] void fail(const std::string& msg) const {
        throw DataError("checkpoint " + origin_ + ": " + msg);
    }

private:
    const std::vector<char>& bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<char> serialize_checkpoint(const Checkpoint& ckpt) {
    nlohmann::json header;
    header["model"] = config::to_json(ckpt.config);
    header["epoch"] = ckpt.epoch;
    header["train_subjects"] = ckpt.train_subjects;
    if (ckpt.norm) {
        header["norm"] = {{"mean", ckpt.norm->mean}, {"std", ckpt.norm->stddev}};
    }
    if (ckpt.optimizer) header["optimizer_step"] = ckpt.optimizer->step;
    const std::string text = header.dump();

    Writer w;
    w.put_bytes(kMagic, sizeof(kMagic));
    w.put<std::uint32_t>(Checkpoint::kVersion);
    w.put<std::uint64_t>(text.size());
    w.put_bytes(text.data(), text.size());
    std::uint32_t count = static_cast<std::uint32_t>(ckpt.params.count());
    if (ckpt.optimizer) count += static_cast<std::uint32_t>(ckpt.optimizer->m.count() + ckpt.optimizer->v.count());
    w.put<std::uint32_t>(count);
    for (const auto& a : ckpt.params.arrays()) w.put_array("param/" + a.name, a);
    if (ckpt.optimizer) {
        for (const auto& a : ckpt.optimizer->m.arrays()) w.put_array("adam.m/" + a.name, a);
        for (const auto& a : ckpt.optimizer->v.arrays()) w.put_array("adam.v/" + a.name, a);
    }
    return std::move(w.bytes);
}

Checkpoint deserialize_checkpoint(const std::vector<char>& bytes, const std::string& origin) {
    Reader r(bytes, origin);
    char magic[8];
    r.take(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) r.fail("bad magic (not a checkpoint)");
    const auto version = r.get<std::uint32_t>();
    if (version != Checkpoint::kVersion) r.fail("unsupported version " + std::to_string(version));
    const auto header_len = r.get<std::uint64_t>();
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.get_string(header_len));
    } catch (const nlohmann::json::exception& e) {
        r.fail(std::string("unreadable header: ") + e.what());
    }

    Checkpoint ckpt;
    try {
        ckpt.config = config::model_from_json(header.at("model"), "/model", origin);
        ckpt.epoch = header.at("epoch").get<std::uint64_t>();
        ckpt.train_subjects = header.value("train_subjects", std::vector<std::string>{});
        if (header.contains("norm")) {
            ckpt.norm = data::NormStats{header["norm"].at("mean").get<std::vector<double>>(),
                                        header["norm"].at("std").get<std::vector<double>>()};
        }
    } catch (const nlohmann::json::exception& e) {
        r.fail(std::string("bad header: ") + e.what());
    }
    const bool has_optimizer = header.contains("optimizer_step");
    if (has_optimizer) {
        ckpt.optimizer.emplace();
        ckpt.optimizer->step = header["optimizer_step"].get<std::uint64_t>();
    }

    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto full = r.get_string(r.get<std::uint32_t>());
        const auto rank = r.get<std::uint32_t>();
        if (rank > 8) r.fail("array '" + full + "' has implausible rank " + std::to_string(rank));
        ad::Shape shape(rank);
        for (auto& d : shape) d = r.get<std::uint64_t>();
        const auto n = ad::numel(shape);
        if (n > bytes.size()) r.fail("array '" + full + "' is larger than the file");
        std::vector<float> values(n);
        r.take(values.data(), n * sizeof(float));
        const auto slash = full.find('/');
        const std::string group = full.substr(0, slash);
        const std::string name = slash == std::string::npos ? std::string() : full.substr(slash + 1);
        if (group == "param") {
            ckpt.params.add(name, std::move(shape), std::move(values));
        } else if (has_optimizer && group == "adam.m") {
            ckpt.optimizer->m.add(name, std::move(shape), std::move(values));
        } else if (has_optimizer && group == "adam.v") {
            ckpt.optimizer->v.add(name, std::move(shape), std::move(values));
        } else {
            r.fail("unexpected array '" + full + "'");
        }
    }
    if (!r.done()) r.fail("trailing bytes after the last array");

    const auto expected = model::param_shapes(ckpt.config);
    auto check = [&](const ParamSet<float>& set, const std::string& what) {
        if (set.count() != expected.size()) {
            r.fail(what + " holds " + std::to_string(set.count()) + " arrays, config implies " +
                   std::to_string(expected.size()));
        }
        for (std::size_t i = 0; i < expected.size(); ++i) {
            const auto& a = set.arrays()[i];
            if (a.name != expected[i].first || a.shape != expected[i].second) {
                r.fail(what + " array '" + a.name + "' " + ad::shape_string(a.shape) + " does not match config ('" +
                       expected[i].first + "' " + ad::shape_string(expected[i].second) + ")");
            }
        }
    };
    check(ckpt.params, "parameter set");
    if (ckpt.optimizer) {
        check(ckpt.optimizer->m, "first-moment set");
        check(ckpt.optimizer->v, "second-moment set");
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(ckpt);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write checkpoint " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw DataError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes, path.string());
}

}  // namespace gaitssl
