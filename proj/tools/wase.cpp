#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "wase/checkpoint.hpp"
#include "wase/common.hpp"
#include "wase/corpus.hpp"
#include "wase/dataset.hpp"
#include "wase/model.hpp"
#include "wase/signal.hpp"
#include "wase/tensor.hpp"
#include "wase/trainer.hpp"
#include "wase/wav.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace wase;

namespace {

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::string corpus, train_manifest, eval_manifest, out;
};

// Strict JSON: a `preset` key (desk|paper|tiny) expands model + schedule
// defaults first, then explicit keys override field by field.
RunConfig parse_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw config_error("config " + path + ": " + e.what());
    }
    if (!j.is_object()) throw config_error("config " + path + ": expected a JSON object");

    RunConfig rc;
    if (j.contains("preset")) {
        const std::string preset = j["preset"].get<std::string>();
        if (preset == "desk") {
            rc.model = desk_config();
        } else if (preset == "paper") {
            rc.model = paper_config();
            rc.train.vp_freeze_epoch = 150;
            rc.train.max_epochs = 300;
        } else if (preset == "tiny") {
            rc.model = tiny_config();
        } else {
            throw config_error("unknown preset: " + preset);
        }
    }

    const auto& mk = model_config_keys();
    const auto& tk = train_config_keys();
    const std::set<std::string> model_keys(mk.begin(), mk.end());
    const std::set<std::string> train_keys(tk.begin(), tk.end());
    json jm = json::parse(model_config_to_json(rc.model));
    json jt = json::parse(train_config_to_json(rc.train));
    for (const auto& [key, val] : j.items()) {
        if (key == "preset") continue;
        if (model_keys.count(key)) {
            jm[key] = val;
        } else if (train_keys.count(key)) {
            jt[key] = val;
        } else if (key == "corpus") {
            rc.corpus = val.get<std::string>();
        } else if (key == "train_manifest") {
            rc.train_manifest = val.get<std::string>();
        } else if (key == "eval_manifest") {
            rc.eval_manifest = val.get<std::string>();
        } else if (key == "out") {
            rc.out = val.get<std::string>();
        } else {
            throw config_error("unknown run config key: " + key);
        }
    }
    rc.model = model_config_from_json(jm.dump());
    rc.train = train_config_from_json(jt.dump());
    return rc;
}

// The dataset manifests record the label mode per line; the first line is
// authoritative (build_dataset writes a single mode per manifest).
std::string manifest_mode(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw io_error("cannot open manifest: " + manifest_path);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) break;
    if (line.empty()) throw io_error("empty manifest: " + manifest_path);
    try {
        return json::parse(line).value("mode", std::string());
    } catch (const json::parse_error& e) {
        throw io_error("bad manifest line in " + manifest_path + ": " + e.what());
    }
}

void check_mode_compatible(const ModelConfig& cfg, const std::string& manifest_path) {
    if (!cfg.has_detector()) return;
    const std::string data_mode = manifest_mode(manifest_path);
    if (!data_mode.empty() && data_mode != cfg.label_mode())
        throw config_error("model labels are '" + cfg.label_mode() + "' but dataset " +
                           manifest_path + " was built with mode '" + data_mode + "'");
}

int cmd_synth(int speakers, int clips, double seconds, int sample_rate, uint64_t seed,
              const std::string& out) {
    Corpus corpus = synth_corpus(speakers, clips, seconds, sample_rate, seed);
    save_corpus(corpus, out);
    std::cout << "wrote " << corpus.clips.size() << " clips (" << speakers << " speakers x "
              << clips << ") to " << out << "\n";
    return 0;
}

int cmd_build_dataset(const std::string& corpus_dir, const std::string& out,
                      const DatasetSpec& spec) {
    Corpus corpus = load_corpus(corpus_dir);
    build_dataset(corpus, spec, out);
    std::cout << "wrote " << spec.n_train << " train / " << spec.n_eval
              << " eval examples (mode " << spec.mode << ") to " << out << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& resume) {
    RunConfig rc = parse_run_config(config_path);
    if (rc.train_manifest.empty() || rc.eval_manifest.empty())
        throw config_error("config must set train_manifest and eval_manifest");
    if (rc.out.empty()) throw config_error("config must set out");
    check_mode_compatible(rc.model, rc.train_manifest);
    check_mode_compatible(rc.model, rc.eval_manifest);

    std::vector<MixtureExample> train_set = load_examples(rc.train_manifest);
    std::vector<MixtureExample> dev_set = load_examples(rc.eval_manifest);
    Corpus corpus;
    if (!rc.corpus.empty()) corpus = load_corpus(rc.corpus);

    WaseModel model(rc.model, rc.train.seed);
    Trainer trainer(model, rc.train);
    if (!resume.empty()) {
        LoadedCheckpoint loaded = load_checkpoint(resume, model, &trainer.optimizer());
        if (!loaded.has_train) throw config_error("checkpoint has no training state: " + resume);
        trainer.restore(loaded.train);
        std::cout << "resumed at epoch " << loaded.train.epoch << " (lr " << loaded.train.lr
                  << ")\n";
    }

    FitResult res = fit(trainer, train_set, dev_set, rc.corpus.empty() ? nullptr : &corpus,
                        rc.out, [](int epoch, const EvalReport& dev, double train_loss) {
                            std::cout << "epoch " << epoch << ": train_loss=" << train_loss
                                      << " dev_sisnri=" << dev.mean_sisnri_db << " dB\n";
                            return true;
                        });

    EvalReport final_rep = evaluate(model, dev_set, rc.train.oracle_cues);
    write_eval_report(final_rep, rc.out + "/report.json", rc.out + "/report.csv");
    std::cout << "done: " << res.epochs_run << " epochs, best dev SI-SNRi " << res.best_dev
              << " dB, final mean " << final_rep.mean_sisnri_db << " dB\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& manifest, bool oracle_cues,
             const std::string& out_dir) {
    ModelConfig cfg = peek_checkpoint_config(ckpt);
    check_mode_compatible(cfg, manifest);
    WaseModel model(cfg);
    load_checkpoint(ckpt, model);
    std::vector<MixtureExample> examples = load_examples(manifest);
    EvalReport rep = evaluate(model, examples, oracle_cues);
    fs::create_directories(out_dir);
    write_eval_report(rep, out_dir + "/report.json", out_dir + "/report.csv");
    std::cout << "mean SI-SNRi " << rep.mean_sisnri_db << " dB over " << rep.n_examples
              << " examples";
    if (!rep.acc.empty()) std::cout << ", final-probe acc " << rep.acc.back();
    std::cout << "\n";
    return 0;
}

int cmd_extract(const std::string& ckpt, const std::string& mixture_path,
                const std::string& reference_path, const std::string& out_path,
                const std::string& cue_csv) {
    ModelConfig cfg = peek_checkpoint_config(ckpt);
    WaseModel model(cfg);
    load_checkpoint(ckpt, model);

    Waveform mixture = read_wav(mixture_path);
    if (mixture.sample_rate != cfg.sample_rate)
        throw config_error("sample rate mismatch: " + mixture_path + " is " +
                           std::to_string(mixture.sample_rate) + " Hz, model expects " +
                           std::to_string(cfg.sample_rate) + " Hz (no resampling)");
    Waveform reference = mixture;
    if (cfg.uses_reference()) {
        if (reference_path.empty())
            throw config_error("cue mode '" + cfg.cue_mode + "' needs --reference");
        reference = read_wav(reference_path);
        if (reference.sample_rate != cfg.sample_rate)
            throw config_error("sample rate mismatch: " + reference_path + " is " +
                               std::to_string(reference.sample_rate) + " Hz, model expects " +
                               std::to_string(cfg.sample_rate) + " Hz (no resampling)");
    }
    if (!cue_csv.empty() && !cfg.has_detector())
        throw config_error("cue mode '" + cfg.cue_mode + "' produces no cue trace");

    NoGradGuard ng;
    WaseModel::Forward out =
        model.forward(waveform_tensor(mixture), waveform_tensor(reference));
    write_wav(out_path, tensor_waveform(out.target_est, cfg.sample_rate), WavFormat::float32);

    if (!cue_csv.empty()) {
        std::ofstream csv(cue_csv, std::ios::trunc);
        if (!csv) throw io_error("cannot write cue trace: " + cue_csv);
        csv << "frame,time_s,value\n";
        const auto& cue = out.cue.values();
        for (size_t i = 0; i < cue.size(); ++i)
            csv << i << ',' << (static_cast<double>(i) * cfg.enc_stride / cfg.sample_rate) << ','
                << cue[i] << "\n";
        if (!csv) throw io_error("write failed: " + cue_csv);
    }
    std::cout << "wrote " << out.target_est.dim(1) << " samples to " << out_path << "\n";
    return 0;
}

int cmd_count_params(const std::string& preset, const std::string& config_path) {
    ModelConfig cfg;
    if (!config_path.empty()) {
        cfg = parse_run_config(config_path).model;
    } else if (preset == "desk") {
        cfg = desk_config();
    } else if (preset == "paper") {
        cfg = paper_config();
    } else if (preset == "tiny") {
        cfg = tiny_config();
    } else {
        throw config_error("unknown preset: " + preset);
    }
    WaseModel model(cfg);
    std::cout << model.param_count() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"onset/offset-cue-guided target speaker extraction"};
    app.require_subcommand(1);

    // synth
    int speakers = 0, clips = 0, sample_rate = 8000;
    double seconds = 2.0;
    uint64_t seed = 0;
    std::string out_dir;
    auto* synth = app.add_subcommand("synth", "generate a pseudo-speaker corpus");
    synth->add_option("--speakers", speakers, "number of speakers")->required();
    synth->add_option("--clips", clips, "clips per speaker")->required();
    synth->add_option("--seconds", seconds, "clip length in seconds");
    synth->add_option("--sample-rate", sample_rate, "sample rate in Hz");
    synth->add_option("--seed", seed, "random seed");
    synth->add_option("--out", out_dir, "output directory")->required();

    // build-dataset
    std::string corpus_dir;
    DatasetSpec spec;
    auto* build = app.add_subcommand("build-dataset", "mix training/eval examples from a corpus");
    build->add_option("--corpus", corpus_dir, "corpus directory")->required();
    build->add_option("--out", out_dir, "output directory")->required();
    build->add_option("--n-train", spec.n_train, "number of training examples")->required();
    build->add_option("--n-eval", spec.n_eval, "number of eval examples (even)")->required();
    build->add_option("--mode", spec.mode, "label mode: onset or onset_offset");
    build->add_option("--stride", spec.enc_stride, "encoder stride for label frames");
    build->add_option("--clip-seconds", spec.clip_seconds, "example length in seconds");
    build->add_option("--snr-min", spec.snr_min_db, "lowest mixing SNR in dB");
    build->add_option("--snr-max", spec.snr_max_db, "highest mixing SNR in dB");
    build->add_option("--seed", spec.seed, "random seed");

    // train
    std::string config_path, resume_path;
    auto* train = app.add_subcommand("train", "train from a JSON run config");
    train->add_option("--config", config_path, "run config JSON")->required();
    train->add_option("--resume", resume_path, "checkpoint to continue from");

    // eval
    std::string ckpt_path, manifest_path;
    bool oracle_cues = false;
    auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset manifest");
    eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    eval->add_option("--dataset", manifest_path, "dataset manifest (JSONL)")->required();
    eval->add_flag("--oracle-cues", oracle_cues, "gate with oracle labels instead of the detector");
    eval->add_option("--out", out_dir, "report directory")->default_val(".");

    // extract
    std::string mixture_path, reference_path, out_wav, cue_csv;
    auto* extract = app.add_subcommand("extract", "extract the target speaker from one mixture");
    extract->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    extract->add_option("--mixture", mixture_path, "mixture WAV")->required();
    extract->add_option("--reference", reference_path, "reference WAV of the target speaker");
    extract->add_option("--out", out_wav, "output WAV")->required();
    extract->add_option("--cue-csv", cue_csv, "write the per-frame cue trace here");

    // count-params
    std::string preset = "desk";
    auto* count = app.add_subcommand("count-params", "print the model parameter count");
    count->add_option("--preset", preset, "desk, paper, or tiny");
    count->add_option("--config", config_path, "run config JSON (overrides --preset)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 3;
    }

    try {
        if (synth->parsed()) return cmd_synth(speakers, clips, seconds, sample_rate, seed, out_dir);
        if (build->parsed()) return cmd_build_dataset(corpus_dir, out_dir, spec);
        if (train->parsed()) return cmd_train(config_path, resume_path);
        if (eval->parsed()) return cmd_eval(ckpt_path, manifest_path, oracle_cues, out_dir);
        if (extract->parsed())
            return cmd_extract(ckpt_path, mixture_path, reference_path, out_wav, cue_csv);
        if (count->parsed()) return cmd_count_params(preset, config_path);
    } catch (const io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const config_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const numeric_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
