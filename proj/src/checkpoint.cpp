// SPDX-License-Identifier: Apache-2.0
#include "akt/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace akt::cli {

namespace {

constexpr char kMagic[4] = {'A', 'K', 'T', 'C'};

template <class T>
T to_le(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    }
    return v;
}

template <class T>
void put(std::ostream& out, T v) {
    v = to_le(v);
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("checkpoint " + path + ": truncated");
    return to_le(v);
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t parse_hex64(const std::string& s) { return std::stoull(s, nullptr, 16); }

nlohmann::json mask_json(const StoredMask& m) {
    std::string bits;
    for (auto b : m.mask.u) bits += b ? '1' : '0';
    return {{"lambda", m.mask.lambda}, {"bits", bits}, {"qids", m.qids}};
}

void add_params(Checkpoint& ckpt, const std::vector<num::Parameter*>& params) {
    for (const auto* p : params) ckpt.blobs.emplace_back(p->name, p->value);
}

void load_params(const Checkpoint& ckpt, const std::vector<num::Parameter*>& params) {
    for (auto* p : params) {
        const auto& t = ckpt.blob(p->name);
        if (!t.same_shape(p->value)) {
            throw DataError("checkpoint: blob '" + p->name + "' has shape " + std::to_string(t.rows()) + "x" +
                            std::to_string(t.cols()) + ", expected " + std::to_string(p->value.rows()) + "x" +
                            std::to_string(p->value.cols()));
        }
        p->value = t;
    }
}

template <class T>
T field(const nlohmann::json& j, const char* key) {
    if (!j.contains(key)) throw DataError(std::string("checkpoint: metadata lacks '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: bad metadata field '") + key + "': " + e.what());
    }
}

}  // namespace

const num::Tensor& Checkpoint::blob(const std::string& name) const {
    for (const auto& [n, t] : blobs)
        if (n == name) return t;
    throw DataError("checkpoint: missing blob '" + name + "'");
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write checkpoint " + path.string());
        out.write(kMagic, 4);
        put<std::uint32_t>(out, kCheckpointVersion);
        const std::string meta = ckpt.meta.dump();
        put<std::uint64_t>(out, meta.size());
        out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.blobs.size()));
        for (const auto& [name, t] : ckpt.blobs) {
            put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
            out.write(name.data(), static_cast<std::streamsize>(name.size()));
            put<std::uint64_t>(out, t.rows());
            put<std::uint64_t>(out, t.cols());
            for (double v : t.values()) put<double>(out, v);
        }
        if (!out) throw DataError("cannot write checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    const std::string p = path.string();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + p);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw DataError("checkpoint " + p + ": bad magic");
    const auto version = get<std::uint32_t>(in, p);
    if (version != kCheckpointVersion) {
        throw DataError("checkpoint " + p + ": unsupported version " + std::to_string(version));
    }
    const auto meta_len = get<std::uint64_t>(in, p);
    if (meta_len > (1ull << 32)) throw DataError("checkpoint " + p + ": implausible metadata size");
    std::string meta(meta_len, '\0');
    in.read(meta.data(), static_cast<std::streamsize>(meta_len));
    if (!in) throw DataError("checkpoint " + p + ": truncated");
    Checkpoint ckpt;
    try {
        ckpt.meta = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + p + ": bad metadata: " + e.what());
    }
    const auto count = get<std::uint32_t>(in, p);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = get<std::uint32_t>(in, p);
        if (name_len > 4096) throw DataError("checkpoint " + p + ": implausible blob name");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto rows = get<std::uint64_t>(in, p);
        const auto cols = get<std::uint64_t>(in, p);
        if (rows != 0 && cols > (1ull << 40) / rows) throw DataError("checkpoint " + p + ": implausible blob shape");
        num::Tensor t(rows, cols);
        for (double& v : t.values()) v = get<double>(in, p);
        ckpt.blobs.emplace_back(std::move(name), std::move(t));
    }
    if (in.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint " + p + ": trailing bytes");
    return ckpt;
}

Checkpoint pack_autoencoder(autoenc::AutoencoderParams& ae, const corpus::Vocab& vocab, const StoredMask& mask) {
    Checkpoint ckpt;
    ckpt.meta = {{"kind", "autoencoder"},
                 {"embed_dim", ae.embed_dim()},
                 {"vocab", vocab.tokens()},
                 {"vocab_hash", hex64(vocab.hash())},
                 {"mask", mask_json(mask)}};
    add_params(ckpt, ae.parameters());
    return ckpt;
}

corpus::Vocab unpack_vocab(const Checkpoint& ckpt) {
    auto vocab = corpus::Vocab::from_tokens(field<std::vector<std::string>>(ckpt.meta, "vocab"));
    if (hex64(vocab.hash()) != field<std::string>(ckpt.meta, "vocab_hash")) {
        throw DataError("checkpoint: vocabulary does not match its recorded hash");
    }
    return vocab;
}

autoenc::AutoencoderParams unpack_autoencoder(const Checkpoint& ckpt) {
    const auto& emb = ckpt.blob("ae.embedding");
    auto ae = autoenc::AutoencoderParams::init(emb.rows(), field<std::size_t>(ckpt.meta, "embed_dim"), 0);
    load_params(ckpt, ae.parameters());
    ae.refresh_normalized();
    return ae;
}

std::optional<StoredMask> unpack_mask(const Checkpoint& ckpt) {
    if (!ckpt.meta.contains("mask") || ckpt.meta["mask"].is_null()) return std::nullopt;
    const auto& j = ckpt.meta["mask"];
    StoredMask m;
    m.mask.lambda = field<double>(j, "lambda");
    m.qids = field<std::vector<std::string>>(j, "qids");
    for (char c : field<std::string>(j, "bits")) {
        if (c != '0' && c != '1') throw DataError("checkpoint: mask bits must be 0 or 1");
        m.mask.u.push_back(c == '1');
    }
    if (m.mask.u.size() != m.qids.size()) throw DataError("checkpoint: mask and qid list differ in length");
    return m;
}

Checkpoint pack_model(kt::Model& model, kt::Variant variant, const std::string& stage,
                      const std::optional<StoredMask>& mask) {
    const auto& c = model.cfg;
    Checkpoint ckpt;
    ckpt.meta = {{"kind", "model"},
                 {"variant", std::string(kt::to_string(variant))},
                 {"stage", stage},
                 {"mode", std::string(kt::to_string(c.mode))},
                 {"slip_guess", c.slip_guess},
                 {"adaptation", c.adaptation},
                 {"d_q", c.d_q},
                 {"d_h", c.d_h},
                 {"d_a", c.d_a},
                 {"questions", c.questions},
                 {"qids", model.qids},
                 {"bank_digest", hex64(model.bank_digest)},
                 {"vocab", model.vocab.tokens()},
                 {"vocab_hash", hex64(model.vocab.hash())},
                 {"mask", mask ? mask_json(*mask) : nlohmann::json()}};
    if (model.ae) ckpt.meta["embed_dim"] = model.ae->embed_dim();
    add_params(ckpt, model.all_parameters());
    return ckpt;
}

kt::Variant unpack_variant(const Checkpoint& ckpt) {
    try {
        return kt::parse_variant(field<std::string>(ckpt.meta, "variant"));
    } catch (const UsageError& e) {
        throw DataError(std::string("checkpoint: ") + e.what());
    }
}

kt::Model unpack_model(const Checkpoint& ckpt) {
    if (ckpt.kind() != "model") throw DataError("checkpoint: expected a model checkpoint, got '" + ckpt.kind() + "'");
    const auto& j = ckpt.meta;
    kt::Model m;
    try {
        m.cfg.mode = kt::parse_mode(field<std::string>(j, "mode"));
    } catch (const UsageError& e) {
        throw DataError(std::string("checkpoint: ") + e.what());
    }
    m.cfg.slip_guess = field<bool>(j, "slip_guess");
    m.cfg.adaptation = field<bool>(j, "adaptation");
    m.cfg.d_q = field<std::size_t>(j, "d_q");
    m.cfg.d_h = field<std::size_t>(j, "d_h");
    m.cfg.d_a = field<std::size_t>(j, "d_a");
    m.cfg.questions = field<std::size_t>(j, "questions");
    m.qids = field<std::vector<std::string>>(j, "qids");
    m.bank_digest = parse_hex64(field<std::string>(j, "bank_digest"));
    m.vocab = unpack_vocab(ckpt);
    if (m.qids.size() != m.cfg.questions) throw DataError("checkpoint: qid list does not match question count");
    if (m.cfg.mode == kt::QuestionMode::text) m.ae = unpack_autoencoder(ckpt);
    m.kt = kt::KTParams::init(m.cfg, 0);
    load_params(ckpt, m.kt.parameters(m.cfg));
    return m;
}

}  // namespace akt::cli
