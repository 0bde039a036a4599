#include "hml/checkpoint.hpp"

#include "hml/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace hml {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'H', 'M', 'L', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

struct Tensor {
    std::string name;
    const Array* array;
};

std::vector<Tensor> tensor_table(const ModelParams& p) {
    std::vector<Tensor> t;
    for (std::size_t i = 0; i < p.backbone.size(); ++i) {
        t.push_back({"backbone." + std::to_string(i) + ".weight", &p.backbone[i].weight});
        t.push_back({"backbone." + std::to_string(i) + ".bias", &p.backbone[i].bias});
    }
    for (const auto& [level, d] : p.heads) {
        t.push_back({"head." + std::to_string(level) + ".weight", &d.weight});
        t.push_back({"head." + std::to_string(level) + ".bias", &d.bias});
    }
    t.push_back({"transform.weight", &p.transform.weight});
    t.push_back({"transform.bias", &p.transform.bias});
    return t;
}

json arch_to_json(const Architecture& a) {
    json heads = json::array();
    for (const auto& [level, dim] : a.head_dims) heads.push_back({level, dim});
    return {{"input_dim", a.input_dim}, {"hidden", a.hidden}, {"activation", to_string(a.activation)}, {"heads", heads}};
}

Architecture arch_from_json(const json& j) {
    Architecture a;
    a.input_dim = j.at("input_dim");
    a.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    a.activation = parse_activation(j.at("activation"));
    for (const auto& h : j.at("heads")) a.head_dims[h.at(0).get<int>()] = h.at(1).get<std::size_t>();
    a.validate();
    return a;
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
    const ModelParams& p = ckpt.state.params;
    const auto tensors = tensor_table(p);
    json table = json::array();
    std::uint64_t offset = 0;
    for (const auto& t : tensors) {
        table.push_back({{"name", t.name}, {"shape", t.array->shape()}, {"offset", offset}});
        offset += t.array->size() * sizeof(double);
    }
    const json header{{"format", "hml-checkpoint"},
                      {"format_version", Checkpoint::kFormatVersion},
                      {"config", to_json(ckpt.config)},
                      {"iteration", ckpt.state.iteration},
                      // Task indices consumed so far; the stream itself is a pure function of the seed.
                      {"seed_state", {{"root_seed", ckpt.config.train.seed},
                                      {"next_task_index", ckpt.state.iteration * ckpt.config.train.meta_batch}}},
                      {"loss_stats", {{"count", ckpt.state.loss.count},
                                      {"mean_bits", std::bit_cast<std::uint64_t>(ckpt.state.loss.mean)},
                                      {"last_bits", std::bit_cast<std::uint64_t>(ckpt.state.loss.last)}}},
                      {"architecture", arch_to_json(p.arch)},
                      {"transform_enabled", p.transform_enabled},
                      {"tensors", table}};
    const std::string text = header.dump();

    std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
    put_u64(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& t : tensors) {
        const auto bytes = std::as_bytes(t.array->data());
        for (std::byte b : bytes) out.push_back(static_cast<unsigned char>(b));
    }
    return out;
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw ValidationError("checkpoint: bad magic");
    const std::uint64_t len = get_u64(bytes.data() + 8);
    if (len > bytes.size() - 16) throw ValidationError("checkpoint: truncated header");
    const json header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
    if (header.at("format") != "hml-checkpoint" || header.at("format_version") != Checkpoint::kFormatVersion)
        throw ValidationError("checkpoint: unsupported format");

    Checkpoint ckpt;
    ckpt.config = config_from_json(header.at("config"));
    ckpt.state.iteration = header.at("iteration");
    ckpt.state.loss.count = header.at("loss_stats").at("count");
    ckpt.state.loss.mean = std::bit_cast<double>(header.at("loss_stats").at("mean_bits").get<std::uint64_t>());
    ckpt.state.loss.last = std::bit_cast<double>(header.at("loss_stats").at("last_bits").get<std::uint64_t>());

    ModelParams& p = ckpt.state.params;
    p.arch = arch_from_json(header.at("architecture"));
    p.transform_enabled = header.at("transform_enabled");
    const std::size_t feature = p.arch.feature_dim();
    std::size_t in = p.arch.input_dim;
    for (auto h : p.arch.hidden) {
        p.backbone.push_back({Array(in, h), Array(1, h)});
        in = h;
    }
    for (const auto& [level, dim] : p.arch.head_dims) p.heads[level] = {Array(feature, dim), Array(1, dim)};
    p.transform = {Array(feature, feature), Array(1, feature)};

    const unsigned char* payload = bytes.data() + 16 + len;
    const std::size_t payload_size = bytes.size() - 16 - len;
    const auto& table = header.at("tensors");
    auto tensors = tensor_table(p);
    if (table.size() != tensors.size()) throw ValidationError("checkpoint: tensor table does not match architecture");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const auto& entry = table[i];
        auto* target = const_cast<Array*>(tensors[i].array);
        if (entry.at("name") != tensors[i].name || entry.at("shape").get<std::vector<std::size_t>>() != target->shape())
            throw ValidationError("checkpoint: unexpected tensor " + entry.at("name").get<std::string>());
        const std::uint64_t off = entry.at("offset");
        const std::size_t n = target->size() * sizeof(double);
        if (off > payload_size || n > payload_size - off) throw ValidationError("checkpoint: truncated payload");
        std::memcpy(target->data().data(), payload + off, n);
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    const auto bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read checkpoint " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace hml
