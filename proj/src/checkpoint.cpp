#include "fedmekt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fedmekt {

namespace {

constexpr char kMagic[8] = {'F', 'M', 'K', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u64(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

void put_f64(std::ostream& os, double v) {
    put_u64(os, std::bit_cast<std::uint64_t>(v));
}

void put_str(std::ostream& os, const std::string& s) {
    put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint64_t get_u64(std::istream& is) {
    char b[8];
    if (!is.read(b, 8)) throw std::runtime_error("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
}

std::uint32_t get_u32(std::istream& is) {
    char b[4];
    if (!is.read(b, 4)) throw std::runtime_error("checkpoint truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    return v;
}

double get_f64(std::istream& is) {
    return std::bit_cast<double>(get_u64(is));
}

std::string get_str(std::istream& is) {
    std::uint64_t n = get_u64(is);
    if (n > (1u << 20)) throw std::runtime_error("checkpoint string length is implausible");
    std::string s(n, '\0');
    if (n > 0 && !is.read(s.data(), static_cast<std::streamsize>(n)))
        throw std::runtime_error("checkpoint truncated");
    return s;
}

void put_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    put_str(os, name);
    put_u64(os, t.rank());
    for (std::size_t d : t.shape()) put_u64(os, d);
    for (double v : t.data()) put_f64(os, v);
}

void get_tensor_into(std::istream& is, const std::string& want_name, Tensor& t) {
    std::string name = get_str(is);
    if (name != want_name)
        throw std::runtime_error("checkpoint parameter order mismatch: expected '" + want_name +
                                 "', found '" + name + "'");
    std::uint64_t rank = get_u64(is);
    if (rank != t.rank())
        throw std::runtime_error("checkpoint parameter '" + name + "' has the wrong rank");
    for (std::size_t d = 0; d < rank; ++d)
        if (get_u64(is) != t.shape()[d])
            throw std::runtime_error("checkpoint parameter '" + name + "' has the wrong shape");
    for (double& v : t.data()) v = get_f64(is);
}

void put_arch(std::ostream& os, const ArchSpec& a) {
    put_str(os, a.modality_a);
    put_str(os, a.modality_b);
    for (std::size_t v : {a.d_a, a.d_b, a.h1_a, a.h1_b, a.h2, a.t_seq, a.classes,
                          a.classifier_hidden})
        put_u64(os, v);
}

ArchSpec get_arch(std::istream& is) {
    ArchSpec a;
    a.modality_a = get_str(is);
    a.modality_b = get_str(is);
    a.d_a = get_u64(is);
    a.d_b = get_u64(is);
    a.h1_a = get_u64(is);
    a.h1_b = get_u64(is);
    a.h2 = get_u64(is);
    a.t_seq = get_u64(is);
    a.classes = get_u64(is);
    a.classifier_hidden = get_u64(is);
    return a;
}

}  // namespace

void save_checkpoint(const std::string& path, const ServerState& server) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");

    os.write(kMagic, sizeof(kMagic));
    put_u32(os, kVersion);
    put_u64(os, server.round);
    put_arch(os, server.model.arch);
    put_u32(os, server.model.a ? 1 : 0);
    put_u32(os, server.model.b ? 1 : 0);

    std::size_t model_count = 0;
    for_each_param(server.model, [&](const std::string&, const Tensor&) { ++model_count; });
    put_u64(os, model_count);
    for_each_param(server.model,
                   [&](const std::string& name, const Tensor& t) { put_tensor(os, name, t); });

    std::size_t clf_count = 0;
    for_each_param(server.classifier, [&](const std::string&, const Tensor&) { ++clf_count; });
    put_u64(os, clf_count);
    for_each_param(server.classifier,
                   [&](const std::string& name, const Tensor& t) { put_tensor(os, name, t); });

    os.flush();
    if (!os) throw std::runtime_error("failed while writing '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint '" + path + "'");

    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("'" + path + "' is not a checkpoint file");
    std::uint32_t version = get_u32(is);
    if (version != kVersion)
        throw std::runtime_error("checkpoint version " + std::to_string(version) +
                                 " is not supported");

    Checkpoint ck;
    ck.round = get_u64(is);
    ck.arch = get_arch(is);
    ck.arch.validate();
    bool has_a = get_u32(is) != 0;
    bool has_b = get_u32(is) != 0;

    ck.model = init_model(ck.arch, 0, has_a, has_b);
    ParamRefs model_refs = param_refs(ck.model);
    std::uint64_t model_count = get_u64(is);
    if (model_count != model_refs.size())
        throw std::runtime_error("checkpoint model parameter count mismatch");
    for (auto& [name, tensor] : model_refs) get_tensor_into(is, name, *tensor);

    ck.classifier = init_classifier(ck.arch, 0);
    ParamRefs clf_refs = param_refs(ck.classifier);
    std::uint64_t clf_count = get_u64(is);
    if (clf_count != clf_refs.size())
        throw std::runtime_error("checkpoint classifier parameter count mismatch");
    for (auto& [name, tensor] : clf_refs) get_tensor_into(is, name, *tensor);

    return ck;
}

}  // namespace fedmekt
