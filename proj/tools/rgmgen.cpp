// Command line front end for the radio galaxy morphology generation pipeline.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "rgm/datapipe.hpp"
#include "rgm/dnnae.hpp"
#include "rgm/errors.hpp"
#include "rgm/gmm.hpp"
#include "rgm/persistence.hpp"

namespace {

using namespace rgm;

std::vector<std::size_t> parse_size_list(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ','))
        out.push_back(std::stoul(tok));
    if (out.empty())
        throw ConfigError("empty list: " + s);
    return out;
}

int parse_class(const std::string& s) {
    if (s == "fri" || s == "FRI") return 0;
    if (s == "frii" || s == "FRII") return 1;
    throw ConfigError("unknown class '" + s + "' (expected fri or frii)");
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Replace `--config FILE` with the file's key=value pairs as flags for the
// chosen subcommand. Explicit flags take precedence; unknown keys are rejected.
void expand_config(CLI::App& app, std::vector<std::string>& args) {
    std::string cfg_path;
    for (std::size_t i = 0; i < args.size();) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size())
                throw CLI::ConfigError("--config requires a file argument");
            cfg_path = args[i + 1];
            args.erase(args.begin() + static_cast<long>(i),
                       args.begin() + static_cast<long>(i) + 2);
        } else if (args[i].rfind("--config=", 0) == 0) {
            cfg_path = args[i].substr(9);
            args.erase(args.begin() + static_cast<long>(i));
        } else {
            ++i;
        }
    }
    if (cfg_path.empty())
        return;
    if (args.empty())
        throw CLI::ConfigError("--config requires a subcommand");
    CLI::App* sub = app.get_subcommand_no_throw(args[0]);
    if (sub == nullptr)
        throw CLI::ConfigError("unknown subcommand '" + args[0] + "'");
    std::ifstream in(cfg_path);
    if (!in)
        throw CLI::ConfigError("cannot open config file " + cfg_path);
    std::string line;
    std::vector<std::string> extra;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw CLI::ConfigError("malformed config line (expected key=value): " + line);
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        std::string flag = "--" + key;
        if (sub->get_option_no_throw(flag) == nullptr)
            throw CLI::ConfigError("unknown config key '" + key + "' for subcommand " + args[0]);
        bool overridden = false;
        for (const std::string& a : args)
            if (a == flag || a.rfind(flag + "=", 0) == 0) {
                overridden = true;
                break;
            }
        if (!overridden) {
            extra.push_back(flag);
            extra.push_back(val);
        }
    }
    args.insert(args.end(), extra.begin(), extra.end());
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct TrainFlags {
    std::string data_path;
    std::string out_ckpt;
    std::string metrics_path;
    std::string resume_path;
    std::string widths = "2048,1024,1024";
    std::size_t code_len = 256;
    std::string loss = "mse_ce";
    std::string reg = "bn";
    double keep_prob = 0.5;
    std::size_t epochs = 200;
    std::size_t batch_size = 100;
    std::size_t save_every = 0;
    std::size_t start_epoch = 0;
    std::uint64_t seed = 0;
};

void add_train_flags(CLI::App* sub, TrainFlags& f, bool with_outputs) {
    sub->add_option("--data", f.data_path, "input dataset (.rgds)")->required();
    sub->add_option("--widths", f.widths, "encoder hidden widths, comma separated");
    sub->add_option("--code-len", f.code_len, "code layer width");
    sub->add_option("--loss", f.loss, "loss mode")->check(CLI::IsMember({"mse", "mse_ce"}));
    sub->add_option("--reg", f.reg, "regularizer")->check(CLI::IsMember({"bn", "dropout"}));
    sub->add_option("--keep-prob", f.keep_prob, "dropout keep probability");
    sub->add_option("--epochs", f.epochs, "training epochs");
    sub->add_option("--batch-size", f.batch_size, "mini-batch size");
    sub->add_option("--seed", f.seed, "RNG seed");
    if (with_outputs) {
        sub->add_option("--out", f.out_ckpt, "output checkpoint path")->required();
        sub->add_option("--metrics", f.metrics_path, "per-epoch metrics CSV path");
        sub->add_option("--save-every", f.save_every,
                        "checkpoint every N epochs (also snaps state to storage precision)");
        sub->add_option("--resume", f.resume_path, "checkpoint to resume from");
        sub->add_option("--start-epoch", f.start_epoch, "first epoch index when resuming");
    }
}

ArchSpec arch_from_flags(const TrainFlags& f, std::size_t input_side) {
    ArchSpec arch;
    arch.input_side = input_side;
    arch.encoder_widths = parse_size_list(f.widths);
    arch.decoder_widths = arch.encoder_widths;
    std::reverse(arch.decoder_widths.begin(), arch.decoder_widths.end());
    arch.code_len = f.code_len;
    arch.regularizer = f.reg == "bn" ? Regularizer::Bn : Regularizer::Dropout;
    arch.keep_prob = f.keep_prob;
    return arch;
}

std::vector<EpochMetrics> run_training(DnnaeModel& model, const Dataset& ds,
                                       const TrainFlags& f) {
    Matrix train_x, val_x;
    std::vector<int> train_y, val_y;
    dataset_split(ds, Split::Train, train_x, train_y);
    dataset_split(ds, Split::Val, val_x, val_y);

    TrainConfig cfg;
    cfg.epochs = f.epochs;
    cfg.start_epoch = f.start_epoch;
    cfg.batch_size = f.batch_size;
    cfg.seed = f.seed;
    cfg.loss_mode = f.loss == "mse" ? LossMode::MseOnly : LossMode::MsePlusCe;

    EpochCallback cb;
    if (f.save_every > 0 && !f.out_ckpt.empty()) {
        cb = [&f](DnnaeModel& m, std::size_t epoch) {
            if ((epoch + 1) % f.save_every == 0) {
                truncate_to_storage(m);
                save_checkpoint(f.out_ckpt, m);
            }
        };
    }
    return train(model, train_x, train_y, val_x, val_y, cfg, cb);
}

int cmd_synth(std::size_t n_per_class, std::size_t n_train, std::size_t n_val,
              std::size_t n_test, std::size_t aug_fri, std::size_t aug_frii,
              std::uint64_t seed, const std::string& out) {
    std::map<int, std::size_t> factors{{0, aug_fri}, {1, aug_frii}};
    Dataset ds;
    if (n_train + n_val + n_test > 0)
        ds = synth_dataset_counts(n_train, n_val, n_test, factors, seed);
    else
        ds = synth_dataset(n_per_class, factors, seed);
    save_dataset(out, ds);
    std::cout << "wrote " << ds.samples.size() << " records to " << out << "\n";
    return 0;
}

int cmd_prep(const std::string& labels_csv, const std::string& images_dir,
             std::size_t aug_fri, std::size_t aug_frii, std::uint64_t seed,
             const std::string& out) {
    std::ifstream in(labels_csv);
    if (!in)
        throw ValidationError("cannot open labels file " + labels_csv);
    std::vector<RawImage> raws;
    std::vector<int> labels;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line == "filename,label") continue;
        auto comma = line.find(',');
        if (comma == std::string::npos)
            throw ValidationError("malformed labels line: " + line);
        std::string fname = line.substr(0, comma);
        std::string cls = line.substr(comma + 1);
        raws.push_back(load_pgm((std::filesystem::path(images_dir) / fname).string()));
        labels.push_back(parse_class(cls));
    }
    std::map<int, std::size_t> factors{{0, aug_fri}, {1, aug_frii}};
    Dataset ds = build_dataset(raws, labels, factors, seed);
    save_dataset(out, ds);
    std::cout << "wrote " << ds.samples.size() << " records to " << out << "\n";
    return 0;
}

int cmd_train(const TrainFlags& f) {
    Dataset ds = load_dataset(f.data_path);
    DnnaeModel model = f.resume_path.empty()
                           ? build_dnnae(arch_from_flags(f, ds.height), f.seed)
                           : load_checkpoint(f.resume_path);
    std::vector<EpochMetrics> metrics = run_training(model, ds, f);
    truncate_to_storage(model);
    save_checkpoint(f.out_ckpt, model);
    if (!f.metrics_path.empty())
        write_metrics_csv(f.metrics_path, metrics);
    if (!metrics.empty())
        std::cout << "final val_mse=" << fmt(metrics.back().val_mse)
                  << " val_ce=" << fmt(metrics.back().val_ce) << "\n";
    return 0;
}

int cmd_encode(const std::string& data_path, const std::string& ckpt_path,
               const std::string& out_path) {
    Dataset ds = load_dataset(data_path);
    DnnaeModel model = load_checkpoint(ckpt_path);
    std::ostringstream out;
    out << "label,split";
    for (std::size_t j = 0; j < model.arch.code_len; ++j) out << ",f" << j;
    out << "\n";
    const char* split_names[] = {"train", "val", "test"};
    Matrix x(1, model.arch.input_dim());
    for (const Sample& s : ds.samples) {
        std::copy(s.image.begin(), s.image.end(), x.row(0));
        Matrix code = encode(model, x);
        out << s.label << "," << split_names[static_cast<int>(s.split)];
        for (std::size_t j = 0; j < code.cols; ++j) out << "," << fmt(code(0, j));
        out << "\n";
    }
    std::ofstream file(out_path, std::ios::binary);
    file << out.str();
    std::cout << "wrote codes for " << ds.samples.size() << " samples to " << out_path << "\n";
    return 0;
}

int cmd_fit_gmm(const std::string& codes_path, const std::string& cls_name, std::size_t k,
                const std::string& cov, double ridge, double tol, std::size_t max_iters,
                std::uint64_t seed, const std::string& out_path) {
    const int cls = parse_class(cls_name);
    std::ifstream in(codes_path);
    if (!in)
        throw ValidationError("cannot open codes file " + codes_path);
    std::string line;
    std::getline(in, line); // header
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tok;
        std::getline(ss, tok, ',');
        int label = std::stoi(tok);
        std::getline(ss, tok, ',');
        std::string split = tok;
        if (label != cls || split == "test") continue;
        std::vector<double> f;
        while (std::getline(ss, tok, ','))
            f.push_back(std::stod(tok));
        rows.push_back(std::move(f));
    }
    if (rows.empty())
        throw ValidationError("no train/val codes for class " + cls_name);
    Matrix features(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(rows[i].begin(), rows[i].end(), features.row(i));
    EmOptions opts;
    opts.seed = seed;
    opts.ridge = ridge;
    opts.tol = tol;
    opts.max_iters = max_iters;
    EmResult res = em_fit(features, k, cov == "diag" ? CovType::Diag : CovType::Full, opts);
    save_gmm(out_path, res.model);
    std::cout << "fitted " << k << "-component GMM on " << rows.size() << " codes, "
              << res.log_lik_trace.size() << " EM iterations, final mean log-lik "
              << fmt(res.log_lik_trace.back()) << "\n";
    return 0;
}

int cmd_generate(const std::string& gmm_path, const std::string& ckpt_path,
                 const std::string& cls_name, std::size_t n, std::uint64_t seed,
                 const std::string& out_dir) {
    parse_class(cls_name);
    GmmModel gmm = load_gmm(gmm_path);
    DnnaeModel model = load_checkpoint(ckpt_path);
    if (gmm.dim != model.arch.code_len)
        throw ValidationError("GMM dimension does not match checkpoint code length");
    RngStream rng(seed, 0x9E);
    Matrix codes = gmm_sample(gmm, n, rng);
    // codes live in ReLU range; Gaussian samples can dip below zero
    for (double& v : codes.data)
        if (v < 0.0) v = 0.0;
    Matrix images = decode(model, codes);
    std::filesystem::create_directories(out_dir);
    for (std::size_t i = 0; i < n; ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s_%03zu.pgm", cls_name.c_str(), i);
        std::vector<double> img(images.row(i), images.row(i) + images.cols);
        export_pgm(img, model.arch.input_side, model.arch.input_side,
                   (std::filesystem::path(out_dir) / name).string());
    }
    std::cout << "wrote " << n << " generated images to " << out_dir << "\n";
    return 0;
}

int cmd_reconstruct(const std::string& data_path, const std::string& ckpt_path,
                    const std::string& split_name, std::size_t n, const std::string& out_dir) {
    Dataset ds = load_dataset(data_path);
    DnnaeModel model = load_checkpoint(ckpt_path);
    Split split = split_name == "train" ? Split::Train
                                        : (split_name == "val" ? Split::Val : Split::Test);
    Matrix x;
    std::vector<int> labels;
    dataset_split(ds, split, x, labels);
    n = std::min(n, x.rows);
    std::filesystem::create_directories(out_dir);
    for (std::size_t i = 0; i < n; ++i) {
        Matrix one(1, x.cols);
        std::copy(x.row(i), x.row(i) + x.cols, one.row(0));
        Matrix recon = decode(model, encode(model, one));
        for (double& v : recon.data) v = std::clamp(v, 0.0, 1.0);
        char name[64];
        std::snprintf(name, sizeof(name), "input_%03zu.pgm", i);
        export_pgm(std::vector<double>(one.data.begin(), one.data.end()),
                   model.arch.input_side, model.arch.input_side,
                   (std::filesystem::path(out_dir) / name).string());
        std::snprintf(name, sizeof(name), "recon_%03zu.pgm", i);
        export_pgm(recon.data, model.arch.input_side, model.arch.input_side,
                   (std::filesystem::path(out_dir) / name).string());
    }
    std::cout << "wrote " << n << " input/reconstruction pairs to " << out_dir << "\n";
    return 0;
}

int cmd_eval(const std::string& data_path, const std::string& ckpt_path,
             const std::string& out_path) {
    Dataset ds = load_dataset(data_path);
    DnnaeModel model = load_checkpoint(ckpt_path);
    Matrix x;
    std::vector<int> labels;
    dataset_split(ds, Split::Test, x, labels);
    LossReport rep = evaluate(model, x, labels);
    std::ostringstream out;
    out << "mse,ce,mse_fri,mse_frii\n";
    auto per_class = [&](int cls) {
        auto it = rep.per_class_mse.find(cls);
        return it == rep.per_class_mse.end() ? std::string("nan") : fmt(it->second);
    };
    out << fmt(rep.mse) << "," << fmt(rep.ce) << "," << per_class(0) << "," << per_class(1)
        << "\n";
    if (out_path.empty()) {
        std::cout << out.str();
    } else {
        std::ofstream file(out_path, std::ios::binary);
        file << out.str();
    }
    return 0;
}

int cmd_sweep(TrainFlags f, const std::string& code_lens, const std::string& out_path) {
    Dataset ds = load_dataset(f.data_path);
    Matrix test_x;
    std::vector<int> test_y;
    dataset_split(ds, Split::Test, test_x, test_y);
    std::ostringstream out;
    out << "code_len,test_mse,test_mse_fri,test_mse_frii\n";
    for (std::size_t len : parse_size_list(code_lens)) {
        f.code_len = len;
        DnnaeModel model = build_dnnae(arch_from_flags(f, ds.height), f.seed);
        run_training(model, ds, f);
        LossReport rep = evaluate(model, test_x, test_y);
        auto per_class = [&](int cls) {
            auto it = rep.per_class_mse.find(cls);
            return it == rep.per_class_mse.end() ? std::string("nan") : fmt(it->second);
        };
        out << len << "," << fmt(rep.mse) << "," << per_class(0) << "," << per_class(1) << "\n";
        std::cerr << "code_len " << len << ": test_mse " << fmt(rep.mse) << "\n";
    }
    std::ofstream file(out_path, std::ios::binary);
    file << out.str();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Radio galaxy morphology generation pipeline"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic FRI/FRII dataset");
    std::size_t n_per_class = 0, s_train = 0, s_val = 0, s_test = 0;
    std::size_t aug_fri = 1, aug_frii = 1;
    std::uint64_t synth_seed = 0;
    std::string synth_out;
    synth->add_option("--n-per-class", n_per_class, "total images per class (stratified split)");
    synth->add_option("--n-train", s_train, "train images per class");
    synth->add_option("--n-val", s_val, "val images per class");
    synth->add_option("--n-test", s_test, "test images per class");
    synth->add_option("--aug-factor-fri", aug_fri, "augmentation factor for FRI");
    synth->add_option("--aug-factor-frii", aug_frii, "augmentation factor for FRII");
    synth->add_option("--seed", synth_seed, "RNG seed");
    synth->add_option("--out", synth_out, "output dataset path")->required();
    synth->callback([&] {
        if (n_per_class == 0 && s_train == 0)
            throw CLI::ValidationError("synth", "give --n-per-class or --n-train/--n-val/--n-test");
        cmd_synth(n_per_class, s_train, s_val, s_test, aug_fri, aug_frii, synth_seed, synth_out);
    });

    // prep
    auto* prep = app.add_subcommand("prep", "preprocess PGM images into a dataset");
    std::string prep_labels, prep_dir = ".", prep_out;
    std::size_t prep_aug_fri = 1, prep_aug_frii = 1;
    std::uint64_t prep_seed = 0;
    prep->add_option("--labels", prep_labels, "CSV of filename,label (FRI|FRII)")->required();
    prep->add_option("--images-dir", prep_dir, "directory containing the PGM files");
    prep->add_option("--aug-factor-fri", prep_aug_fri, "augmentation factor for FRI");
    prep->add_option("--aug-factor-frii", prep_aug_frii, "augmentation factor for FRII");
    prep->add_option("--seed", prep_seed, "RNG seed");
    prep->add_option("--out", prep_out, "output dataset path")->required();
    prep->callback([&] {
        cmd_prep(prep_labels, prep_dir, prep_aug_fri, prep_aug_frii, prep_seed, prep_out);
    });

    // train
    auto* train_cmd = app.add_subcommand("train", "train the autoencoder");
    TrainFlags tf;
    add_train_flags(train_cmd, tf, true);
    train_cmd->callback([&] { cmd_train(tf); });

    // encode
    auto* enc = app.add_subcommand("encode", "extract feature codes to CSV");
    std::string enc_data, enc_ckpt, enc_out;
    enc->add_option("--data", enc_data, "input dataset")->required();
    enc->add_option("--ckpt", enc_ckpt, "model checkpoint")->required();
    enc->add_option("--out", enc_out, "output codes CSV")->required();
    enc->callback([&] { cmd_encode(enc_data, enc_ckpt, enc_out); });

    // fit-gmm
    auto* fit = app.add_subcommand("fit-gmm", "fit a per-class Gaussian mixture on codes");
    std::string fit_codes, fit_class, fit_cov = "diag", fit_out;
    std::size_t fit_k = 3, fit_iters = 500;
    double fit_ridge = 1e-6, fit_tol = 1e-6;
    std::uint64_t fit_seed = 0;
    fit->add_option("--codes", fit_codes, "codes CSV from encode")->required();
    fit->add_option("--class", fit_class, "fri or frii")->required()->check(CLI::IsMember({"fri", "frii", "FRI", "FRII"}));
    fit->add_option("--k", fit_k, "component count");
    fit->add_option("--cov", fit_cov, "covariance type")->check(CLI::IsMember({"diag", "full"}));
    fit->add_option("--ridge", fit_ridge, "covariance ridge");
    fit->add_option("--tol", fit_tol, "EM log-likelihood tolerance");
    fit->add_option("--max-iters", fit_iters, "EM iteration cap");
    fit->add_option("--seed", fit_seed, "RNG seed");
    fit->add_option("--out", fit_out, "output GMM path")->required();
    fit->callback([&] {
        cmd_fit_gmm(fit_codes, fit_class, fit_k, fit_cov, fit_ridge, fit_tol, fit_iters,
                    fit_seed, fit_out);
    });

    // generate
    auto* gen = app.add_subcommand("generate", "sample codes and decode new morphologies");
    std::string gen_gmm, gen_ckpt, gen_class, gen_dir = "generated";
    std::size_t gen_n = 8;
    std::uint64_t gen_seed = 0;
    gen->add_option("--gmm", gen_gmm, "fitted GMM file")->required();
    gen->add_option("--ckpt", gen_ckpt, "model checkpoint")->required();
    gen->add_option("--class", gen_class, "fri or frii")->required()->check(CLI::IsMember({"fri", "frii", "FRI", "FRII"}));
    gen->add_option("-n,--n", gen_n, "number of images")->check(CLI::Range(std::size_t(1), std::size_t(1000000)));
    gen->add_option("--seed", gen_seed, "RNG seed");
    gen->add_option("--out-dir", gen_dir, "output directory for PGM images");
    gen->callback([&] { cmd_generate(gen_gmm, gen_ckpt, gen_class, gen_n, gen_seed, gen_dir); });

    // reconstruct
    auto* rec = app.add_subcommand("reconstruct", "write input/reconstruction image pairs");
    std::string rec_data, rec_ckpt, rec_split = "test", rec_dir = "reconstructions";
    std::size_t rec_n = 8;
    rec->add_option("--data", rec_data, "input dataset")->required();
    rec->add_option("--ckpt", rec_ckpt, "model checkpoint")->required();
    rec->add_option("--split", rec_split, "split to reconstruct")
        ->check(CLI::IsMember({"train", "val", "test"}));
    rec->add_option("-n,--n", rec_n, "number of images");
    rec->add_option("--out-dir", rec_dir, "output directory");
    rec->callback([&] { cmd_reconstruct(rec_data, rec_ckpt, rec_split, rec_n, rec_dir); });

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    std::string ev_data, ev_ckpt, ev_out;
    ev->add_option("--data", ev_data, "input dataset")->required();
    ev->add_option("--ckpt", ev_ckpt, "model checkpoint")->required();
    ev->add_option("--out", ev_out, "output CSV (stdout when omitted)");
    ev->callback([&] { cmd_eval(ev_data, ev_ckpt, ev_out); });

    // sweep
    auto* sweep = app.add_subcommand("sweep", "train across code lengths and tabulate test loss");
    TrainFlags sf;
    std::string sweep_lens = "16,32,64,128,256,512", sweep_out;
    add_train_flags(sweep, sf, false);
    sweep->add_option("--code-lens", sweep_lens, "code lengths, comma separated");
    sweep->add_option("--out", sweep_out, "output CSV")->required();
    sweep->callback([&] { cmd_sweep(sf, sweep_lens, sweep_out); });

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        expand_config(app, args);
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
