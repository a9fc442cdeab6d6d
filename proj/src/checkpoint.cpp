#include "qtart/checkpoint.hpp"

#include <fstream>

#include "qtart/binary_io.hpp"

namespace qtart {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open '" + path.string() + "'");
    }
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write '" + path.string() + "'");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw std::runtime_error("short write to '" + path.string() + "'");
    }
}

namespace {

void put_shape(ByteWriter& w, const Shape& shape) {
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) {
        w.u32(static_cast<std::uint32_t>(d));
    }
}

void put_payload(ByteWriter& w, const Tensor& t) {
    for (float v : t.data) {
        w.f32(v);
    }
}

Shape get_shape(ByteReader& r) {
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank > 8) {
        throw FormatError("implausible tensor rank " + std::to_string(rank), r.offset() - 4);
    }
    Shape shape(rank);
    for (auto& d : shape) {
        d = r.u32("tensor extent");
    }
    return shape;
}

Tensor get_payload(ByteReader& r, Shape shape) {
    const std::size_t n = element_count(shape);
    r.need(n * 4, "tensor payload");
    Tensor t(std::move(shape));
    for (float& v : t.data) {
        v = r.f32("tensor payload");
    }
    return t;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model& model, const TrainingState* state) {
    ByteWriter w;
    w.bytes("QTCK");
    w.u32(checkpoint_version);
    w.u32(static_cast<std::uint32_t>(model.layers().size()));
    w.u32(static_cast<std::uint32_t>(model.input().channels));
    w.u32(static_cast<std::uint32_t>(model.input().height));
    w.u32(static_cast<std::uint32_t>(model.input().width));
    w.u32(static_cast<std::uint32_t>(model.classes()));
    const NormalizationStats& norm = model.normalization();
    w.u32(static_cast<std::uint32_t>(norm.channels()));
    for (double m : norm.mean) {
        w.f64(m);
    }
    for (double s : norm.stddev) {
        w.f64(s);
    }
    for (const Layer& l : model.layers()) {
        w.u32(static_cast<std::uint32_t>(l.kind));
        w.u32(static_cast<std::uint32_t>(l.pad));
        w.u32(static_cast<std::uint32_t>(l.window));
        if (l.has_parameters()) {
            put_shape(w, l.weight.shape);
            put_shape(w, l.bias.shape);
            put_payload(w, l.weight);
            put_payload(w, l.bias);
        }
    }
    w.u8(state ? 1 : 0);
    if (state) {
        w.f64(state->optimizer.learning_rate);
        w.f64(state->optimizer.momentum);
        w.f64(state->optimizer.weight_decay);
        w.u32(static_cast<std::uint32_t>(state->optimizer.velocity.size()));
        for (const Tensor& v : state->optimizer.velocity) {
            put_shape(w, v.shape);
            put_payload(w, v);
        }
        w.u64(state->next_epoch);
        w.u8(state->retained ? 1 : 0);
        if (state->retained) {
            w.u64(state->retained->size());
            for (std::size_t i : *state->retained) {
                w.u64(i);
            }
        }
    }
    return w.data();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect("QTCK", "checkpoint");
    const std::uint32_t version = r.u32("version");
    if (version != checkpoint_version) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
    }
    const std::uint32_t layer_count = r.u32("layer count");
    InputSpec input;
    input.channels = r.u32("input channels");
    input.height = r.u32("input height");
    input.width = r.u32("input width");
    const std::size_t classes = r.u32("class count");
    NormalizationStats norm;
    const std::uint32_t norm_channels = r.u32("normalization channels");
    norm.mean.resize(norm_channels);
    norm.stddev.resize(norm_channels);
    for (double& m : norm.mean) {
        m = r.f64("normalization mean");
    }
    for (double& s : norm.stddev) {
        s = r.f64("normalization std");
    }
    std::vector<Layer> layers;
    for (std::uint32_t i = 0; i < layer_count; ++i) {
        const std::size_t at = r.offset();
        const std::uint32_t tag = r.u32("layer kind");
        if (tag < 1 || tag > 5) {
            throw FormatError("unknown layer kind tag " + std::to_string(tag), at);
        }
        Layer l;
        l.kind = static_cast<LayerKind>(tag);
        l.pad = r.u32("layer pad");
        l.window = r.u32("layer window");
        if (l.has_parameters()) {
            Shape ws = get_shape(r);
            Shape bs = get_shape(r);
            l.weight = get_payload(r, std::move(ws));
            l.bias = get_payload(r, std::move(bs));
        }
        layers.push_back(std::move(l));
    }
    Checkpoint ck;
    try {
        ck.model = Model(input, classes, std::move(layers), std::move(norm));
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("inconsistent model: ") + e.what(), r.offset());
    }
    if (r.u8("state flag") != 0) {
        TrainingState st;
        st.optimizer.learning_rate = r.f64("learning rate");
        st.optimizer.momentum = r.f64("momentum");
        st.optimizer.weight_decay = r.f64("weight decay");
        const std::uint32_t buffers = r.u32("velocity count");
        for (std::uint32_t k = 0; k < buffers; ++k) {
            Shape s = get_shape(r);
            st.optimizer.velocity.push_back(get_payload(r, std::move(s)));
        }
        st.next_epoch = r.u64("epoch cursor");
        if (r.u8("retained flag") != 0) {
            const std::uint64_t count = r.u64("retained count");
            r.need(count * 8, "retained indices");
            std::vector<std::size_t> retained(count);
            for (auto& idx : retained) {
                idx = r.u64("retained index");
            }
            st.retained = std::move(retained);
        }
        ck.state = std::move(st);
    }
    if (!r.done()) {
        throw FormatError("trailing bytes after checkpoint", r.offset());
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, const TrainingState* state) {
    write_file(path, encode_checkpoint(model, state));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw std::runtime_error("checkpoint '" + path.string() + "' does not exist");
    }
    const auto bytes = read_file(path);
    try {
        return decode_checkpoint(bytes);
    } catch (const FormatError& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

}  // namespace qtart
