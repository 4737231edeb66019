#include "invjoint/checkpoint.hpp"

#include <algorithm>

#include "invjoint/errors.hpp"
#include "invjoint/trainer.hpp"

namespace invjoint {

namespace {

struct Array {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

InvJointModel blank_model(const RunConfig& cfg) {
    return InvJointModel::init(cfg.model, ModelDims::of(cfg.generator), cfg.irm.include_25d, 0);
}

Checkpoint read(const std::string& bytes, const RunConfig* expected) {
    serial::Reader in(bytes, kCheckpointMagic);
    in.expect_section("HEADER");
    const auto version = in.u64();
    if (version != kCheckpointVersion)
        throw LoadError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kCheckpointVersion) + ")");

    in.expect_section("CONFIG");
    Checkpoint ck;
    try {
        ck.config = run_config_from_json(nlohmann::json::parse(in.bytes()));
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("checkpoint config is malformed: ") + e.what());
    } catch (const ContractError& e) {
        throw LoadError(std::string("checkpoint config is invalid: ") + e.what());
    }

    in.expect_section("PARAMS");
    std::vector<Array> arrays(in.u64());
    for (auto& a : arrays) {
        a.name = in.bytes();
        const auto rank = in.u64();
        if (rank > 4) throw LoadError("array '" + a.name + "' has implausible rank");
        for (std::uint64_t r = 0; r < rank; ++r) a.shape.push_back(in.u64());
        a.values = in.f64s(shape_numel(a.shape));
    }

    in.expect_section("OPTIM");
    ck.optim.base_lr = in.f64();
    ck.optim.weight_decay = in.f64();
    ck.optim.momentum = in.f64();
    ck.optim.epoch = static_cast<int>(in.u64());
    ck.optim.total_epochs = static_cast<int>(in.u64());
    ck.epoch = ck.optim.epoch;
    ck.velocity.resize(in.u64());
    for (auto& group : ck.velocity) {
        group.resize(in.u64());
        for (auto& buf : group) buf = in.f64s(in.u64());
    }
    in.expect_section("END");
    if (!in.at_end()) throw LoadError("trailing bytes after END section");

    const RunConfig& against = expected ? *expected : ck.config;
    ck.model = blank_model(against);
    const auto params = ck.model.named_parameters();
    const std::size_t common = std::min(params.size(), arrays.size());
    for (std::size_t i = 0; i < common; ++i) {
        const auto& [name, tensor] = params[i];
        const Array& a = arrays[i];
        if (a.name != name)
            throw LoadError("array " + std::to_string(i) + " is '" + a.name + "', config expects '" + name + "'");
        if (a.shape != tensor.shape())
            throw LoadError("array '" + name + "' has shape " + shape_str(a.shape) + ", config expects " +
                            shape_str(tensor.shape()));
    }
    if (arrays.size() > params.size()) throw LoadError("array '" + arrays[common].name + "' is not in the config");
    if (params.size() > arrays.size()) throw LoadError("array '" + params[common].first + "' is missing");
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor t = params[i].second;
        auto dst = t.mutable_data();
        std::copy(arrays[i].values.begin(), arrays[i].values.end(), dst.begin());
    }

    const auto groups = ck.model.param_groups();
    if (ck.velocity.size() != groups.size()) throw LoadError("momentum buffers do not match the parameter groups");
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (ck.velocity[g].size() != groups[g].parameters.size())
            throw LoadError("momentum buffers of group '" + groups[g].name + "' do not match its parameters");
        for (std::size_t p = 0; p < ck.velocity[g].size(); ++p)
            if (!ck.velocity[g][p].empty() && ck.velocity[g][p].size() != groups[g].parameters[p].numel())
                throw LoadError("momentum buffer size mismatch in group '" + groups[g].name + "'");
    }
    try {
        ck.optim.validate();
    } catch (const ContractError& e) {
        throw LoadError(std::string("checkpoint optimizer state is invalid: ") + e.what());
    }
    if (expected) ck.config = *expected;
    return ck;
}

}  // namespace

Checkpoint make_checkpoint(const TrainResult& r) {
    Checkpoint ck;
    ck.config = r.config;
    ck.model = r.model;
    ck.optim = r.optim;
    ck.velocity = r.velocity;
    ck.epoch = r.optim.epoch;
    const auto groups = ck.model.param_groups();
    ck.velocity.resize(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) ck.velocity[g].resize(groups[g].parameters.size());
    return ck;
}

std::string serialize_checkpoint(const Checkpoint& ck, serial::Mode mode) {
    serial::Writer out(mode, kCheckpointMagic);
    out.section("HEADER");
    out.u64(kCheckpointVersion);
    out.end_record();

    out.section("CONFIG");
    out.bytes(to_json(ck.config).dump());

    out.section("PARAMS");
    const auto params = ck.model.named_parameters();
    out.u64(params.size());
    out.end_record();
    for (const auto& [name, t] : params) {
        out.bytes(name);
        out.u64(t.rank());
        for (std::size_t d : t.shape()) out.u64(d);
        out.end_record();
        out.f64s(t.data());
        out.end_record();
    }

    out.section("OPTIM");
    out.f64(ck.optim.base_lr);
    out.f64(ck.optim.weight_decay);
    out.f64(ck.optim.momentum);
    out.u64(static_cast<std::uint64_t>(ck.optim.epoch));
    out.u64(static_cast<std::uint64_t>(ck.optim.total_epochs));
    out.u64(ck.velocity.size());
    out.end_record();
    for (const auto& group : ck.velocity) {
        out.u64(group.size());
        out.end_record();
        for (const auto& buf : group) {
            out.u64(buf.size());
            out.f64s(buf);
            out.end_record();
        }
    }
    out.section("END");
    out.end_record();
    return out.str();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) { return read(bytes, nullptr); }

Checkpoint deserialize_checkpoint(const std::string& bytes, const RunConfig& expected) {
    return read(bytes, &expected);
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path, serial::Mode mode) {
    serial::write_file(path, serialize_checkpoint(ckpt, mode));
}

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(serial::read_file(path)); }

Checkpoint load_checkpoint(const std::string& path, const RunConfig& expected) {
    return deserialize_checkpoint(serial::read_file(path), expected);
}

}  // namespace invjoint
