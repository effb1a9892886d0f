#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tape/arch.hpp"
#include "tape/params.hpp"

namespace tape {

// Model snapshot: backbone theta, PLM, optional auxiliary phi, per-store
// Adam state, training RNG state, iteration counter.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    ModelConfig model;
    ParameterStore theta;
    ParameterStore plm;
    bool has_phi = false;
    ParameterStore phi;
    AdamState adam_theta, adam_plm, adam_phi;
    std::string rng_state;
    long long iteration = 0;

    Checkpoint deep_copy() const {
        Checkpoint out = *this;
        out.theta = theta.clone();
        out.plm = plm.clone();
        out.phi = phi.clone();
        return out;
    }
};

namespace detail {

inline nlohmann::json adam_to_json(const AdamState& s) {
    return {{"lr", s.lr}, {"beta1", s.beta1}, {"beta2", s.beta2}, {"eps", s.eps}, {"t", s.t}};
}
inline AdamState adam_from_json(const nlohmann::json& j) {
    AdamState s;
    s.lr = j.at("lr");
    s.beta1 = j.at("beta1");
    s.beta2 = j.at("beta2");
    s.eps = j.at("eps");
    s.t = j.at("t");
    return s;
}

inline nlohmann::json model_to_json(const ModelConfig& m) {
    return {{"channels", m.channels}, {"patch", m.patch},           {"heads", m.heads},
            {"n_blocks", m.n_blocks}, {"ffn_mult", m.ffn_mult},     {"plm_hidden", m.plm_hidden},
            {"max_tokens", m.max_tokens}};
}
inline ModelConfig model_from_json(const nlohmann::json& j) {
    ModelConfig m;
    m.channels = j.at("channels");
    m.patch = j.at("patch");
    m.heads = j.at("heads");
    m.n_blocks = j.at("n_blocks");
    m.ffn_mult = j.at("ffn_mult");
    m.plm_hidden = j.at("plm_hidden");
    m.max_tokens = j.at("max_tokens");
    return m;
}

struct BinWriter {
    std::ostream& os;
    void bytes(const void* p, std::size_t n) {
        os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void tensor_block(const std::string& name, const std::vector<int>& shape,
                      const std::vector<double>& data) {
        str(name);
        u32(static_cast<std::uint32_t>(shape.size()));
        for (int d : shape) u32(static_cast<std::uint32_t>(d));
        bytes(data.data(), data.size() * sizeof(double));
    }
};

struct BinReader {
    std::istream& is;
    std::size_t offset = 0;
    void bytes(void* p, std::size_t n) {
        is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(is.gcount()) != n)
            throw format_error("checkpoint: truncated at offset " + std::to_string(offset));
        offset += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        bytes(&v, 4);
        return v;
    }
    std::string str() {
        std::uint32_t n = u32();
        if (n > (1u << 20)) throw format_error("checkpoint: implausible string length at offset " +
                                               std::to_string(offset - 4));
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
};

inline void write_store_blocks(BinWriter& w, const std::string& prefix, const ParameterStore& s,
                               const AdamState& a) {
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto& [name, t] = s.items()[i];
        w.tensor_block(prefix + "/" + name, t.shape(), t.data());
        w.tensor_block("adam/" + prefix + "/" + name + "/m", t.shape(), a.m[i]);
        w.tensor_block("adam/" + prefix + "/" + name + "/v", t.shape(), a.v[i]);
    }
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("save_checkpoint: cannot open " + path);
    detail::BinWriter w{f};

    std::size_t n_tensors = 3 * (ck.theta.size() + ck.plm.size() + (ck.has_phi ? ck.phi.size() : 0));
    nlohmann::json header = {
        {"model", detail::model_to_json(ck.model)},
        {"iteration", ck.iteration},
        {"rng_state", ck.rng_state},
        {"has_phi", ck.has_phi},
        {"tensor_count", n_tensors},
        {"adam",
         {{"theta", detail::adam_to_json(ck.adam_theta)},
          {"plm", detail::adam_to_json(ck.adam_plm)},
          {"phi", detail::adam_to_json(ck.adam_phi)}}},
    };
    std::string hs = header.dump();

    w.bytes("TAPE", 4);
    w.u32(Checkpoint::kVersion);
    w.str(hs);
    detail::write_store_blocks(w, "theta", ck.theta, ck.adam_theta);
    detail::write_store_blocks(w, "plm", ck.plm, ck.adam_plm);
    if (ck.has_phi) detail::write_store_blocks(w, "phi", ck.phi, ck.adam_phi);
    if (!f) throw io_error("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("load_checkpoint: cannot open " + path);
    detail::BinReader r{f};

    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != "TAPE")
        throw format_error("checkpoint: bad magic at offset 0");
    std::uint32_t version = r.u32();
    if (version != Checkpoint::kVersion)
        throw format_error("checkpoint: unsupported version " + std::to_string(version) +
                           " at offset 4");
    std::string hs = r.str();
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw format_error("checkpoint: malformed header at offset 12: " + std::string(e.what()));
    }

    Checkpoint ck;
    try {
        ck.model = detail::model_from_json(header.at("model"));
        ck.iteration = header.at("iteration");
        ck.rng_state = header.at("rng_state");
        ck.has_phi = header.at("has_phi");
        ck.adam_theta = detail::adam_from_json(header.at("adam").at("theta"));
        ck.adam_plm = detail::adam_from_json(header.at("adam").at("plm"));
        ck.adam_phi = detail::adam_from_json(header.at("adam").at("phi"));
    } catch (const nlohmann::json::exception& e) {
        throw format_error("checkpoint: missing header field: " + std::string(e.what()));
    }
    std::size_t n_tensors = header.at("tensor_count");

    for (std::size_t i = 0; i < n_tensors; ++i) {
        std::string name = r.str();
        std::uint32_t rank = r.u32();
        if (rank > 8)
            throw format_error("checkpoint: implausible rank at offset " +
                               std::to_string(r.offset - 4));
        std::vector<int> shape(rank);
        std::size_t numel = 1;
        for (auto& d : shape) {
            d = static_cast<int>(r.u32());
            numel *= static_cast<std::size_t>(d);
        }
        std::vector<double> data(numel);
        r.bytes(data.data(), numel * sizeof(double));

        auto slash = name.find('/');
        if (slash == std::string::npos)
            throw format_error("checkpoint: malformed tensor name '" + name + "'");
        std::string head = name.substr(0, slash);
        std::string rest = name.substr(slash + 1);
        if (head == "theta") {
            ck.theta.add(rest, Tensor(shape, std::move(data)));
        } else if (head == "plm") {
            ck.plm.add(rest, Tensor(shape, std::move(data)));
        } else if (head == "phi") {
            ck.phi.add(rest, Tensor(shape, std::move(data)));
        } else if (head == "adam") {
            // adam/<store>/<param>/(m|v)
            auto s2 = rest.find('/');
            auto s3 = rest.rfind('/');
            if (s2 == std::string::npos || s3 == std::string::npos || s3 <= s2)
                throw format_error("checkpoint: malformed tensor name '" + name + "'");
            std::string store_name = rest.substr(0, s2);
            std::string which = rest.substr(s3 + 1);
            AdamState* a = store_name == "theta" ? &ck.adam_theta
                           : store_name == "plm" ? &ck.adam_plm
                           : store_name == "phi" ? &ck.adam_phi
                                                 : nullptr;
            if (!a || (which != "m" && which != "v"))
                throw format_error("checkpoint: malformed tensor name '" + name + "'");
            (which == "m" ? a->m : a->v).push_back(std::move(data));
        } else {
            throw format_error("checkpoint: unknown tensor group '" + head + "'");
        }
    }

    auto check_store = [](const ParameterStore& s, const AdamState& a, const char* label) {
        if (a.m.size() != s.size() || a.v.size() != s.size())
            throw format_error(std::string("checkpoint: adam state incomplete for ") + label);
        for (std::size_t i = 0; i < s.size(); ++i)
            if (a.m[i].size() != s.items()[i].second.numel() ||
                a.v[i].size() != s.items()[i].second.numel())
                throw format_error(std::string("checkpoint: adam moment shape mismatch for ") +
                                   label);
    };
    check_store(ck.theta, ck.adam_theta, "theta");
    check_store(ck.plm, ck.adam_plm, "plm");
    if (ck.has_phi) check_store(ck.phi, ck.adam_phi, "phi");
    return ck;
}

}  // namespace tape
