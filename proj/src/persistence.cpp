#include "rgm/persistence.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "rgm/errors.hpp"

namespace rgm {

namespace {

void atomic_write(const std::string& path, const std::vector<unsigned char>& buf) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw FormatError("cannot open " + tmp + " for writing");
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
        if (!out)
            throw FormatError("short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError("cannot open " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    return buf;
}

struct Writer {
    std::vector<unsigned char> buf;

    void u8(std::uint8_t v) { buf.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void magic(const char m[5]) { buf.insert(buf.end(), m, m + 4); }
    void f32_array(const double* v, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) f32(static_cast<float>(v[i]));
    }
    void f64_array(const double* v, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) f64(v[i]);
    }
};

struct Reader {
    std::vector<unsigned char> buf;
    std::size_t pos = 0;
    std::string path;

    Reader(const std::string& p) : buf(read_file(p)), path(p) {}

    void need(std::size_t n) {
        if (pos + n > buf.size())
            throw FormatError(path + ": truncated at offset " + std::to_string(pos) +
                              " (need " + std::to_string(n) + " bytes, have " +
                              std::to_string(buf.size() - pos) + ")");
    }
    std::uint8_t u8() {
        need(1);
        return buf[pos++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    void check_magic(const char m[5]) {
        need(4);
        if (std::memcmp(buf.data() + pos, m, 4) != 0)
            throw FormatError(path + ": bad magic, expected " + std::string(m, 4));
        pos += 4;
    }
    void check_version(std::uint32_t expected) {
        std::uint32_t v = u32();
        if (v != expected)
            throw FormatError(path + ": unsupported version " + std::to_string(v));
    }
    void f32_array(double* v, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<double>(f32());
    }
    void f64_array(double* v, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) v[i] = f64();
    }
    void done() {
        if (pos != buf.size())
            throw FormatError(path + ": " + std::to_string(buf.size() - pos) +
                              " trailing bytes at offset " + std::to_string(pos));
    }
};

double f32_trunc(double v) { return static_cast<double>(static_cast<float>(v)); }

} // namespace

void save_dataset(const std::string& path, const Dataset& ds) {
    Writer w;
    w.magic("RGDS");
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(ds.samples.size()));
    w.u32(ds.height);
    w.u32(ds.width);
    const std::size_t px = static_cast<std::size_t>(ds.height) * ds.width;
    for (const Sample& s : ds.samples) {
        if (s.image.size() != px)
            throw ValidationError("save_dataset: sample pixel count mismatch");
        w.u8(static_cast<std::uint8_t>(s.label));
        w.u8(static_cast<std::uint8_t>(s.split));
        w.u32(s.origin_id);
        w.u32(s.aug_index);
        w.f32_array(s.image.data(), px);
    }
    atomic_write(path, w.buf);
}

Dataset load_dataset(const std::string& path) {
    Reader r(path);
    r.check_magic("RGDS");
    r.check_version(1);
    Dataset ds;
    const std::uint32_t count = r.u32();
    ds.height = r.u32();
    ds.width = r.u32();
    const std::size_t px = static_cast<std::size_t>(ds.height) * ds.width;
    const std::size_t expected = 20 + static_cast<std::size_t>(count) * (10 + 4 * px);
    if (r.buf.size() != expected)
        throw FormatError(path + ": expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(r.buf.size()));
    ds.samples.resize(count);
    for (Sample& s : ds.samples) {
        s.label = r.u8();
        std::uint8_t split = r.u8();
        if (split > 2)
            throw FormatError(path + ": invalid split tag at offset " + std::to_string(r.pos - 1));
        s.split = static_cast<Split>(split);
        s.origin_id = r.u32();
        s.aug_index = r.u32();
        s.image.resize(px);
        r.f32_array(s.image.data(), px);
        for (double v : s.image)
            if (v < 0.0 || v > 1.0)
                throw FormatError(path + ": pixel outside [0,1]");
    }
    r.done();
    return ds;
}

namespace {

void write_layer_block(Writer& w, const DenseLayer& l, const LayerOpt& opt, bool with_adam) {
    w.u32(static_cast<std::uint32_t>(l.weights.rows));
    w.u32(static_cast<std::uint32_t>(l.weights.cols));
    std::uint8_t flags = (l.has_bn ? 1 : 0) | (with_adam ? 2 : 0);
    w.u8(flags);
    w.f32_array(l.weights.data.data(), l.weights.size());
    w.f32_array(l.bias.data(), l.bias.size());
    if (l.has_bn) {
        w.f32_array(l.bn.gamma.data(), l.bn.gamma.size());
        w.f32_array(l.bn.beta.data(), l.bn.beta.size());
        w.f32_array(l.bn.running_mean.data(), l.bn.running_mean.size());
        w.f32_array(l.bn.running_var.data(), l.bn.running_var.size());
    }
    if (with_adam) {
        auto write_state = [&](const AdamState& s) {
            w.u64(s.t);
            w.f32_array(s.m.data(), s.m.size());
            w.f32_array(s.v.data(), s.v.size());
        };
        write_state(opt.w);
        write_state(opt.b);
        if (l.has_bn) {
            write_state(opt.gamma);
            write_state(opt.beta);
        }
    }
}

void read_layer_block(Reader& r, DenseLayer& l, LayerOpt& opt) {
    std::uint32_t rows = r.u32();
    std::uint32_t cols = r.u32();
    if (rows != l.weights.rows || cols != l.weights.cols)
        throw FormatError(r.path + ": layer dimensions disagree with architecture descriptor");
    std::uint8_t flags = r.u8();
    bool has_bn = flags & 1;
    bool has_adam = flags & 2;
    if (has_bn != l.has_bn)
        throw FormatError(r.path + ": BN flag disagrees with architecture descriptor");
    r.f32_array(l.weights.data.data(), l.weights.size());
    r.f32_array(l.bias.data(), l.bias.size());
    if (l.has_bn) {
        r.f32_array(l.bn.gamma.data(), l.bn.gamma.size());
        r.f32_array(l.bn.beta.data(), l.bn.beta.size());
        r.f32_array(l.bn.running_mean.data(), l.bn.running_mean.size());
        r.f32_array(l.bn.running_var.data(), l.bn.running_var.size());
        for (double v : l.bn.running_var)
            if (v < 0.0)
                throw FormatError(r.path + ": negative running variance");
    }
    if (has_adam) {
        auto read_state = [&](AdamState& s) {
            s.t = r.u64();
            r.f32_array(s.m.data(), s.m.size());
            r.f32_array(s.v.data(), s.v.size());
        };
        read_state(opt.w);
        read_state(opt.b);
        if (l.has_bn) {
            read_state(opt.gamma);
            read_state(opt.beta);
        }
    }
}

} // namespace

void save_checkpoint(const std::string& path, const DnnaeModel& model, bool with_adam) {
    const ArchSpec& a = model.arch;
    Writer w;
    w.magic("DNAE");
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(a.input_side));
    w.u32(static_cast<std::uint32_t>(a.encoder_widths.size()));
    for (std::size_t v : a.encoder_widths) w.u32(static_cast<std::uint32_t>(v));
    w.u32(static_cast<std::uint32_t>(a.code_len));
    w.u32(static_cast<std::uint32_t>(a.decoder_widths.size()));
    for (std::size_t v : a.decoder_widths) w.u32(static_cast<std::uint32_t>(v));
    w.u8(a.regularizer == Regularizer::Bn ? 0 : 1);
    w.f32(static_cast<float>(a.keep_prob));
    w.u32(static_cast<std::uint32_t>(a.n_classes));
    w.u32(static_cast<std::uint32_t>(model.layers.size() + 1));
    for (std::size_t i = 0; i < model.layers.size(); ++i)
        write_layer_block(w, model.layers[i], model.opt[i], with_adam);
    write_layer_block(w, model.head, model.head_opt, with_adam);
    atomic_write(path, w.buf);
}

DnnaeModel load_checkpoint(const std::string& path) {
    Reader r(path);
    r.check_magic("DNAE");
    r.check_version(1);
    ArchSpec a;
    a.input_side = r.u32();
    a.encoder_widths.resize(r.u32());
    for (std::size_t& v : a.encoder_widths) v = r.u32();
    a.code_len = r.u32();
    a.decoder_widths.resize(r.u32());
    for (std::size_t& v : a.decoder_widths) v = r.u32();
    a.regularizer = r.u8() == 0 ? Regularizer::Bn : Regularizer::Dropout;
    a.keep_prob = static_cast<double>(r.f32());
    a.n_classes = r.u32();
    DnnaeModel model = build_dnnae(a, 0);
    std::uint32_t n_blocks = r.u32();
    if (n_blocks != model.layers.size() + 1)
        throw FormatError(path + ": block count disagrees with architecture descriptor");
    for (std::size_t i = 0; i < model.layers.size(); ++i)
        read_layer_block(r, model.layers[i], model.opt[i]);
    read_layer_block(r, model.head, model.head_opt);
    r.done();
    return model;
}

void truncate_to_storage(DnnaeModel& model) {
    auto trunc_vec = [](std::vector<double>& v) {
        for (double& x : v) x = f32_trunc(x);
    };
    auto trunc_layer = [&](DenseLayer& l, LayerOpt& o) {
        trunc_vec(l.weights.data);
        trunc_vec(l.bias);
        if (l.has_bn) {
            trunc_vec(l.bn.gamma);
            trunc_vec(l.bn.beta);
            trunc_vec(l.bn.running_mean);
            trunc_vec(l.bn.running_var);
        }
        trunc_vec(o.w.m);
        trunc_vec(o.w.v);
        trunc_vec(o.b.m);
        trunc_vec(o.b.v);
        trunc_vec(o.gamma.m);
        trunc_vec(o.gamma.v);
        trunc_vec(o.beta.m);
        trunc_vec(o.beta.v);
    };
    for (std::size_t i = 0; i < model.layers.size(); ++i)
        trunc_layer(model.layers[i], model.opt[i]);
    trunc_layer(model.head, model.head_opt);
}

void save_gmm(const std::string& path, const GmmModel& model) {
    Writer w;
    w.magic("GMM1");
    w.u32(1);
    w.u32(static_cast<std::uint32_t>(model.k));
    w.u32(static_cast<std::uint32_t>(model.dim));
    w.u8(model.cov_type == CovType::Diag ? 0 : 1);
    const std::size_t cov_len = model.cov_type == CovType::Diag ? model.dim
                                                                : model.dim * model.dim;
    for (std::size_t c = 0; c < model.k; ++c) {
        w.f64(model.weights[c]);
        w.f64_array(model.means.row(c), model.dim);
        if (model.covariances[c].size() != cov_len)
            throw ValidationError("save_gmm: covariance size mismatch");
        w.f64_array(model.covariances[c].data(), cov_len);
    }
    atomic_write(path, w.buf);
}

GmmModel load_gmm(const std::string& path) {
    Reader r(path);
    r.check_magic("GMM1");
    r.check_version(1);
    GmmModel model;
    model.k = r.u32();
    model.dim = r.u32();
    std::uint8_t ct = r.u8();
    if (ct > 1)
        throw FormatError(path + ": invalid covariance type");
    model.cov_type = ct == 0 ? CovType::Diag : CovType::Full;
    const std::size_t cov_len = model.cov_type == CovType::Diag ? model.dim
                                                                : model.dim * model.dim;
    model.weights.resize(model.k);
    model.means = Matrix(model.k, model.dim);
    model.covariances.assign(model.k, std::vector<double>(cov_len));
    for (std::size_t c = 0; c < model.k; ++c) {
        model.weights[c] = r.f64();
        r.f64_array(model.means.row(c), model.dim);
        r.f64_array(model.covariances[c].data(), cov_len);
    }
    r.done();
    double wsum = 0.0;
    for (double wv : model.weights) {
        if (wv < 0.0)
            throw FormatError(path + ": negative mixture weight");
        wsum += wv;
    }
    if (std::abs(wsum - 1.0) > 1e-12)
        throw FormatError(path + ": mixture weights do not sum to 1");
    for (std::size_t c = 0; c < model.k; ++c) {
        if (model.cov_type == CovType::Diag) {
            for (double v : model.covariances[c])
                if (v <= 0.0)
                    throw FormatError(path + ": non-positive variance in component " +
                                      std::to_string(c));
        } else {
            try {
                cholesky(model.covariances[c], model.dim);
            } catch (const NumericError&) {
                throw FormatError(path + ": covariance of component " + std::to_string(c) +
                                  " is not positive definite");
            }
        }
    }
    return model;
}

void export_pgm(const std::vector<double>& image, std::size_t height, std::size_t width,
                const std::string& path) {
    if (image.size() != height * width)
        throw ValidationError("export_pgm: pixel count mismatch");
    for (double v : image)
        if (!(v >= 0.0 && v <= 1.0))
            throw ValidationError("export_pgm: pixel outside [0,1]");
    std::string header =
        "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n65535\n";
    std::vector<unsigned char> buf(header.begin(), header.end());
    for (double v : image) {
        // round half up
        std::uint32_t q = static_cast<std::uint32_t>(std::floor(v * 65535.0 + 0.5));
        if (q > 65535) q = 65535;
        buf.push_back(static_cast<unsigned char>(q >> 8)); // PGM samples are big-endian
        buf.push_back(static_cast<unsigned char>(q & 0xFF));
    }
    atomic_write(path, buf);
}

RawImage load_pgm(const std::string& path) {
    std::vector<unsigned char> buf = read_file(path);
    std::size_t pos = 0;
    auto next_token = [&]() -> std::string {
        while (pos < buf.size()) {
            if (std::isspace(buf[pos])) {
                ++pos;
            } else if (buf[pos] == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else {
                break;
            }
        }
        std::size_t start = pos;
        while (pos < buf.size() && !std::isspace(buf[pos])) ++pos;
        if (start == pos)
            throw FormatError(path + ": truncated PGM header");
        return std::string(buf.begin() + static_cast<long>(start),
                           buf.begin() + static_cast<long>(pos));
    };
    if (next_token() != "P5")
        throw FormatError(path + ": not a binary PGM (P5) file");
    std::size_t width = std::stoul(next_token());
    std::size_t height = std::stoul(next_token());
    unsigned long maxval = std::stoul(next_token());
    if (maxval == 0 || maxval > 65535)
        throw FormatError(path + ": invalid maxval");
    ++pos; // single whitespace after maxval
    const std::size_t n = height * width;
    const std::size_t bytes_per = maxval < 256 ? 1 : 2;
    if (buf.size() - pos != n * bytes_per)
        throw FormatError(path + ": expected " + std::to_string(n * bytes_per) +
                          " sample bytes, got " + std::to_string(buf.size() - pos));
    RawImage img{height, width, std::vector<double>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        unsigned long v;
        if (bytes_per == 1) {
            v = buf[pos + i];
        } else {
            v = (static_cast<unsigned long>(buf[pos + 2 * i]) << 8) | buf[pos + 2 * i + 1];
        }
        img.pixels[i] = static_cast<double>(v);
    }
    return img;
}

} // namespace rgm
