#include "emgtf/checkpoint.hpp"

#include <map>

#include "binary_io.hpp"
#include "emgtf/error.hpp"

namespace emgtf {

namespace {

void put_spec(io::Writer& w, const ModelSpec& s) {
    for (std::size_t v : {s.channels, s.window, s.patch, s.dim, s.depth, s.heads, s.mlp_dim, s.n_classes,
                          s.fnb_k_v1, s.fnb_k_v2, s.fnb_capacity}) {
        w.put(static_cast<std::uint64_t>(v));
    }
    w.put(static_cast<std::uint8_t>(s.variant));
}

ModelSpec get_spec(io::Reader& r) {
    ModelSpec s;
    for (std::size_t* v : {&s.channels, &s.window, &s.patch, &s.dim, &s.depth, &s.heads, &s.mlp_dim, &s.n_classes,
                           &s.fnb_k_v1, &s.fnb_k_v2, &s.fnb_capacity}) {
        const auto x = r.get<std::uint64_t>("model spec");
        if (x == 0 || x > (1u << 24)) r.fail("implausible model dimension " + std::to_string(x));
        *v = static_cast<std::size_t>(x);
    }
    const auto variant = r.get<std::uint8_t>("variant");
    if (variant > 3) r.fail("unknown variant code " + std::to_string(variant));
    s.variant = static_cast<Variant>(variant);
    return s;
}

} // namespace

void save_checkpoint(const EmgtfNet<float>& model, std::uint64_t seed, const std::filesystem::path& path) {
    io::Writer w(path);
    w.tag("EMCK");
    w.put(kCheckpointVersion);
    put_spec(w, model.spec());
    w.put(seed);

    const auto params = model.parameters();
    w.put(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        w.string(p.name);
        w.put(static_cast<std::uint32_t>(p.tensor.rank()));
        for (auto d : p.tensor.shape()) w.put(static_cast<std::uint64_t>(d));
        for (float v : p.tensor.data()) w.put(v);
    }

    const auto banks = model.banks();
    const auto names = model.bank_names();
    w.put(static_cast<std::uint32_t>(banks.size()));
    for (std::size_t i = 0; i < banks.size(); ++i) {
        const auto& b = *banks[i];
        w.string(names[i]);
        w.put(static_cast<std::uint64_t>(b.k()));
        w.put(static_cast<std::uint64_t>(b.dim()));
        w.put(static_cast<std::uint64_t>(b.capacity()));
        w.put(b.seed());
        w.put(b.rollovers());
        for (double v : b.centroids().values) w.put(v);
    }
    w.put(w.checksum());
    w.close();
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<Variant> expected) {
    io::Reader r(path);
    r.expect_tag("EMCK");
    const auto version_at = r.offset();
    if (const auto v = r.get<std::uint32_t>("version"); v != kCheckpointVersion) {
        throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(v), version_at);
    }
    const auto spec_at = r.offset();
    const ModelSpec spec = get_spec(r);
    try {
        spec.validate();
    } catch (const ConfigError& e) {
        throw FormatError(path.string() + ": stored model spec is invalid: " + e.what(), spec_at);
    }
    if (expected && *expected != spec.variant) {
        throw ConfigError(path.string() + ": checkpoint holds variant " + std::string(to_string(spec.variant)) +
                          ", expected " + std::string(to_string(*expected)));
    }
    const auto seed = r.get<std::uint64_t>("seed");

    // Read everything first, verify the hash, then populate the model.
    std::map<std::string, std::pair<Shape, std::vector<float>>> tensors;
    const auto n_tensors = r.get<std::uint32_t>("tensor count");
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        auto name = r.string("tensor name");
        const auto rank = r.get<std::uint32_t>("tensor rank");
        if (rank == 0 || rank > 4) r.fail("bad rank for tensor " + name);
        Shape shape(rank);
        for (auto& d : shape) {
            const auto x = r.get<std::uint64_t>("tensor shape");
            if (x == 0 || x > (1u << 24)) r.fail("bad dimension for tensor " + name);
            d = static_cast<std::size_t>(x);
        }
        const auto n = shape_numel(shape);
        if (n * 4 > r.remaining()) r.fail("truncated tensor " + name);
        std::vector<float> values(n);
        for (auto& v : values) v = r.get<float>("tensor values");
        tensors.emplace(std::move(name), std::make_pair(std::move(shape), std::move(values)));
    }

    struct BankRecord {
        std::uint64_t k, dim, capacity, seed, rollovers;
        std::vector<double> centroids;
    };
    std::map<std::string, BankRecord> bank_records;
    const auto n_banks = r.get<std::uint32_t>("bank count");
    for (std::uint32_t i = 0; i < n_banks; ++i) {
        auto name = r.string("bank name");
        BankRecord rec;
        rec.k = r.get<std::uint64_t>("bank K");
        rec.dim = r.get<std::uint64_t>("bank dim");
        rec.capacity = r.get<std::uint64_t>("bank capacity");
        rec.seed = r.get<std::uint64_t>("bank seed");
        rec.rollovers = r.get<std::uint64_t>("bank rollovers");
        if (rec.k == 0 || rec.dim == 0 || rec.k * rec.dim * 8 > r.remaining()) r.fail("bad centroid bank " + name);
        rec.centroids.resize(rec.k * rec.dim);
        for (auto& v : rec.centroids) v = r.get<double>("centroids");
        bank_records.emplace(std::move(name), std::move(rec));
    }
    const auto expected_hash = r.checksum();
    const auto hash_at = r.offset();
    if (r.get<std::uint64_t>("checksum") != expected_hash) {
        throw FormatError(path.string() + ": checksum mismatch, file is corrupt", hash_at);
    }
    if (r.remaining() != 0) r.fail("trailing bytes after checksum");

    Checkpoint ck{EmgtfNet<float>(spec, seed), seed};
    for (auto& p : ck.model.parameters()) {
        auto it = tensors.find(p.name);
        if (it == tensors.end()) throw FormatError(path.string() + ": missing tensor " + p.name, hash_at);
        if (it->second.first != p.tensor.shape()) {
            throw FormatError(path.string() + ": tensor " + p.name + " has shape " + shape_str(it->second.first) +
                                  ", model expects " + shape_str(p.tensor.shape()),
                              hash_at);
        }
        auto dst = p.tensor.mutable_data();
        std::copy(it->second.second.begin(), it->second.second.end(), dst.begin());
        tensors.erase(it);
    }
    if (!tensors.empty()) {
        throw FormatError(path.string() + ": unexpected tensor " + tensors.begin()->first, hash_at);
    }
    const auto banks = ck.model.banks();
    const auto names = ck.model.bank_names();
    if (bank_records.size() != banks.size()) {
        throw FormatError(path.string() + ": centroid bank count does not match the variant", hash_at);
    }
    for (std::size_t i = 0; i < banks.size(); ++i) {
        auto it = bank_records.find(names[i]);
        if (it == bank_records.end()) throw FormatError(path.string() + ": missing bank " + names[i], hash_at);
        const auto& rec = it->second;
        if (rec.k != banks[i]->k() || rec.dim != banks[i]->dim()) {
            throw FormatError(path.string() + ": bank " + names[i] + " has the wrong size", hash_at);
        }
        auto bank = std::make_shared<CentroidBank>(rec.k, rec.dim, rec.capacity, rec.seed);
        Matrix c(rec.k, rec.dim);
        c.values = rec.centroids;
        bank->set_centroids(std::move(c));
        bank->set_rollovers(rec.rollovers);
        *banks[i] = std::move(*bank);
    }
    return ck;
}

} // namespace emgtf
