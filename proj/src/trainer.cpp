#include "wase/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "wase/common.hpp"
#include "wase/signal.hpp"

namespace wase {

using nlohmann::json;

namespace {
// Finite stand-in for -inf: JSON has no infinities, and any real dev score
// beats it.
constexpr double kWorstDev = -1e300;
}  // namespace

void TrainConfig::validate() const {
    if (!(lr_init > 0)) throw config_error("lr_init must be > 0");
    if (!(stop_lr > 0)) throw config_error("stop_lr must be > 0");
    if (lr_halve_patience < 1 || stop_patience < 1)
        throw config_error("patience values must be >= 1");
    if (vp_freeze_epoch < 0) throw config_error("vp_freeze_epoch must be >= 0");
    if (loss_ratio < 0) throw config_error("loss_ratio must be >= 0");
    if (batch_size < 1) throw config_error("batch_size must be >= 1");
    if (max_epochs < 1) throw config_error("max_epochs must be >= 1");
    if (snr_min_db > snr_max_db) throw config_error("snr_min_db must be <= snr_max_db");
    if (!(clip_seconds > 0)) throw config_error("clip_seconds must be > 0");
}

const std::vector<std::string>& train_config_keys() {
    static const std::vector<std::string> keys = {
        "lr_init",    "lr_halve_patience", "stop_patience", "stop_lr",      "vp_freeze_epoch",
        "loss_ratio", "batch_size",        "max_epochs",    "seed",         "snr_min_db",
        "snr_max_db", "clip_seconds",      "oracle_cues"};
    return keys;
}

std::string train_config_to_json(const TrainConfig& cfg) {
    json j;
    j["lr_init"] = cfg.lr_init;
    j["lr_halve_patience"] = cfg.lr_halve_patience;
    j["stop_patience"] = cfg.stop_patience;
    j["stop_lr"] = cfg.stop_lr;
    j["vp_freeze_epoch"] = cfg.vp_freeze_epoch;
    j["loss_ratio"] = cfg.loss_ratio;
    j["batch_size"] = cfg.batch_size;
    j["max_epochs"] = cfg.max_epochs;
    j["seed"] = cfg.seed;
    j["snr_min_db"] = cfg.snr_min_db;
    j["snr_max_db"] = cfg.snr_max_db;
    j["clip_seconds"] = cfg.clip_seconds;
    j["oracle_cues"] = cfg.oracle_cues;
    return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw config_error("bad train config JSON: " + std::string(e.what()));
    }
    const auto& keys = train_config_keys();
    const std::set<std::string> known(keys.begin(), keys.end());
    for (const auto& [key, val] : j.items()) {
        if (!known.count(key)) throw config_error("unknown train config key: " + key);
        (void)val;
    }
    TrainConfig cfg;
    try {
        cfg.lr_init = j.value("lr_init", cfg.lr_init);
        cfg.lr_halve_patience = j.value("lr_halve_patience", cfg.lr_halve_patience);
        cfg.stop_patience = j.value("stop_patience", cfg.stop_patience);
        cfg.stop_lr = j.value("stop_lr", cfg.stop_lr);
        cfg.vp_freeze_epoch = j.value("vp_freeze_epoch", cfg.vp_freeze_epoch);
        cfg.loss_ratio = j.value("loss_ratio", cfg.loss_ratio);
        cfg.batch_size = j.value("batch_size", cfg.batch_size);
        cfg.max_epochs = j.value("max_epochs", cfg.max_epochs);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.snr_min_db = j.value("snr_min_db", cfg.snr_min_db);
        cfg.snr_max_db = j.value("snr_max_db", cfg.snr_max_db);
        cfg.clip_seconds = j.value("clip_seconds", cfg.clip_seconds);
        cfg.oracle_cues = j.value("oracle_cues", cfg.oracle_cues);
    } catch (const json::exception& e) {
        throw config_error("bad train config value: " + std::string(e.what()));
    }
    cfg.validate();
    return cfg;
}

Tensor waveform_tensor(const Waveform& w) {
    if (w.samples.empty()) throw std::invalid_argument("waveform_tensor: empty waveform");
    return Tensor::from_values({1, static_cast<int>(w.samples.size())}, w.samples);
}

Waveform tensor_waveform(const Tensor& t, int sample_rate) {
    if (t.shape().size() != 2 || t.dim(0) != 1)
        throw std::invalid_argument("tensor_waveform: expected a 1 x T tensor");
    return Waveform{t.values(), sample_rate};
}

Tensor si_snr_loss(const Tensor& estimate, const std::vector<double>& reference) {
    if (estimate.shape().size() != 2 || estimate.dim(0) != 1)
        throw std::invalid_argument("si_snr_loss: estimate must be 1 x T");
    const int t = estimate.dim(1);
    if (static_cast<int>(reference.size()) != t)
        throw std::invalid_argument("si_snr_loss: reference length mismatch");

    // The reference is a constant; center it (and measure its power) in plain
    // arithmetic.
    double r_mean = 0.0;
    for (double v : reference) r_mean += v;
    r_mean /= t;
    std::vector<double> rc(reference);
    double rr = 0.0;
    for (double& v : rc) {
        v -= r_mean;
        rr += v * v;
    }
    if (!(rr > 0)) throw std::invalid_argument("si_snr_loss: silent reference");

    Tensor ref = Tensor::from_values({1, t}, std::move(rc));
    Tensor est_c = sub(estimate, broadcast_cols(reshape(mean(estimate), {1, 1}), t));
    Tensor alpha = div_scalars(sum(mul(est_c, ref)), Tensor::scalar(rr));
    Tensor s_target = scale_by(ref, alpha);
    Tensor err = sub(est_c, s_target);
    Tensor num = affine(sum(mul(s_target, s_target)), 1.0, 1e-12);
    Tensor den = affine(sum(mul(err, err)), 1.0, 1e-12);
    return affine(log_elem(div_scalars(num, den)), 10.0 / std::log(10.0), 0.0);
}

std::pair<Tensor, LossBreakdown> compute_loss(const WaseModel::Forward& out,
                                              const MixtureExample& ex, double loss_ratio,
                                              const ModelConfig& cfg) {
    (void)cfg;
    const int t_out = out.target_est.dim(1);
    if (static_cast<int>(ex.target.samples.size()) < t_out ||
        static_cast<int>(ex.interferer.samples.size()) < t_out)
        throw std::invalid_argument("compute_loss: sources shorter than the decoded estimate");
    std::vector<double> tgt(ex.target.samples.begin(), ex.target.samples.begin() + t_out);
    std::vector<double> itf(ex.interferer.samples.begin(), ex.interferer.samples.begin() + t_out);

    Tensor si_t = si_snr_loss(out.target_est, tgt);
    Tensor si_i = si_snr_loss(out.interferer_est, itf);
    Tensor loss = affine(add(si_t, si_i), -1.0, 0.0);

    LossBreakdown bd;
    bd.si_snr_target_db = si_t.item();
    bd.si_snr_interferer_db = si_i.item();

    if (out.cue.defined() && loss_ratio > 0.0) {
        const int l = out.cue.dim(1);
        if (static_cast<int>(ex.oracle_labels.size()) < l)
            throw std::invalid_argument("compute_loss: oracle labels shorter than the cue");
        std::vector<double> lab(ex.oracle_labels.begin(), ex.oracle_labels.begin() + l);
        Tensor target = Tensor::from_values({1, l}, std::move(lab));
        Tensor ce = binary_cross_entropy(out.cue, target);
        int n_terms = 1;
        for (const Tensor& p : out.probes) {
            ce = add(ce, binary_cross_entropy(p, target));
            ++n_terms;
        }
        ce = affine(ce, 1.0 / n_terms, 0.0);
        bd.ce_detect = ce.item();
        loss = add(loss, affine(ce, loss_ratio, 0.0));
    }
    bd.total = loss.item();
    return {loss, bd};
}

namespace {

std::string describe(const LossBreakdown& bd) {
    std::ostringstream os;
    os << "total=" << bd.total << " si_snr_target_db=" << bd.si_snr_target_db
       << " si_snr_interferer_db=" << bd.si_snr_interferer_db << " ce_detect=" << bd.ce_detect;
    return os.str();
}

Waveform truncated(const Waveform& w, int n) {
    return Waveform{std::vector<double>(w.samples.begin(), w.samples.begin() + n), w.sample_rate};
}

WaseModel::Forward run_forward(const WaseModel& model, const MixtureExample& ex,
                               bool oracle_cues) {
    Tensor mix = waveform_tensor(ex.mixture);
    Tensor ref = waveform_tensor(ex.reference.samples.empty() ? ex.mixture : ex.reference);
    if (oracle_cues && model.config().has_detector()) {
        std::vector<double> cue(ex.oracle_labels.begin(), ex.oracle_labels.end());
        return model.forward_with_cue(mix, ref, cue);
    }
    return model.forward(mix, ref);
}

}  // namespace

EvalReport evaluate(const WaseModel& model, const std::vector<MixtureExample>& examples,
                    bool oracle_cues) {
    if (examples.empty()) throw config_error("evaluate: empty example set");
    NoGradGuard ng;
    const ModelConfig& cfg = model.config();

    EvalReport rep;
    rep.n_examples = static_cast<int>(examples.size());
    rep.oracle_cues = oracle_cues;
    rep.cue_mode = cfg.cue_mode;

    const int n_probes = cfg.groups + 1;
    std::vector<std::vector<double>> probe_pred(n_probes);
    std::vector<double> cue_pred;
    LabelVector pooled_labels, cue_labels;

    double sum_impr = 0.0;
    for (int i = 0; i < rep.n_examples; ++i) {
        const MixtureExample& ex = examples[i];
        WaseModel::Forward out = run_forward(model, ex, oracle_cues);

        const int t_out = out.target_est.dim(1);
        Waveform est = tensor_waveform(out.target_est, cfg.sample_rate);
        Waveform tgt = truncated(ex.target, t_out);
        Waveform mix = truncated(ex.mixture, t_out);
        EvalRow row;
        row.index = i;
        row.snr_db = ex.snr_db;
        row.target_speaker = ex.target_speaker_id;
        row.si_snr_est_db = si_snr(est, tgt).si_snr_db;
        row.si_snr_mix_db = si_snr(mix, tgt).si_snr_db;
        row.sisnri_db = row.si_snr_est_db - row.si_snr_mix_db;
        sum_impr += row.sisnri_db;
        rep.rows.push_back(row);

        const int l = out.probes.front().dim(1);
        if (static_cast<int>(ex.oracle_labels.size()) < l)
            throw std::invalid_argument("evaluate: oracle labels shorter than the frame count");
        pooled_labels.insert(pooled_labels.end(), ex.oracle_labels.begin(),
                             ex.oracle_labels.begin() + l);
        for (int k = 0; k < n_probes; ++k) {
            const auto& v = out.probes[k].values();
            probe_pred[k].insert(probe_pred[k].end(), v.begin(), v.end());
        }
        if (out.cue.defined()) {
            const auto& v = out.cue.values();
            cue_pred.insert(cue_pred.end(), v.begin(), v.end());
            cue_labels.insert(cue_labels.end(), ex.oracle_labels.begin(),
                              ex.oracle_labels.begin() + l);
        }
    }
    rep.mean_sisnri_db = sum_impr / rep.n_examples;
    for (int k = 0; k < n_probes; ++k) {
        AccF1 m = frame_acc_f1(probe_pred[k], pooled_labels, cfg.cue_threshold);
        rep.acc.push_back(m.acc);
        rep.f1.push_back(m.f1);
    }
    if (!cue_pred.empty()) {
        AccF1 m = frame_acc_f1(cue_pred, cue_labels, cfg.cue_threshold);
        rep.cue_acc = m.acc;
        rep.cue_f1 = m.f1;
    }
    return rep;
}

std::string eval_report_to_json(const EvalReport& rep) {
    json j;
    j["n_examples"] = rep.n_examples;
    j["oracle_cues"] = rep.oracle_cues;
    j["cue_mode"] = rep.cue_mode;
    j["mean_sisnri_db"] = rep.mean_sisnri_db;
    j["acc"] = rep.acc;
    j["f1"] = rep.f1;
    j["cue_acc"] = rep.cue_acc;
    j["cue_f1"] = rep.cue_f1;
    json rows = json::array();
    for (const EvalRow& r : rep.rows) {
        rows.push_back({{"index", r.index},
                        {"snr_db", r.snr_db},
                        {"target_speaker", r.target_speaker},
                        {"si_snr_mix_db", r.si_snr_mix_db},
                        {"si_snr_est_db", r.si_snr_est_db},
                        {"sisnri_db", r.sisnri_db}});
    }
    j["per_example"] = std::move(rows);
    return j.dump(2);
}

void write_eval_report(const EvalReport& rep, const std::string& json_path,
                       const std::string& csv_path) {
    {
        std::ofstream out(json_path, std::ios::trunc);
        if (!out) throw io_error("cannot write report: " + json_path);
        out << eval_report_to_json(rep) << "\n";
        if (!out) throw io_error("write failed: " + json_path);
    }
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw io_error("cannot write report: " + csv_path);
    csv << "index,snr_db,target_speaker,si_snr_mix_db,si_snr_est_db,sisnri_db\n";
    csv << std::setprecision(10);
    for (const EvalRow& r : rep.rows)
        csv << r.index << ',' << r.snr_db << ',' << r.target_speaker << ',' << r.si_snr_mix_db
            << ',' << r.si_snr_est_db << ',' << r.sisnri_db << "\n";
    if (!csv) throw io_error("write failed: " + csv_path);
}

Waveform run_oracle_cue_mode(const WaseModel& model, const MixtureExample& ex) {
    if (ex.oracle_labels.empty())
        throw config_error("run_oracle_cue_mode: example has no oracle labels");
    NoGradGuard ng;
    Tensor mix = waveform_tensor(ex.mixture);
    Tensor ref = waveform_tensor(ex.reference.samples.empty() ? ex.mixture : ex.reference);
    std::vector<double> cue(ex.oracle_labels.begin(), ex.oracle_labels.end());
    WaseModel::Forward out = model.forward_with_cue(mix, ref, cue);
    return tensor_waveform(out.target_est, model.config().sample_rate);
}

Trainer::Trainer(WaseModel& model, TrainConfig cfg)
    : model_(model), cfg_(cfg), opt_(model.param_tensors(), cfg.lr_init) {
    cfg_.validate();
    state_.lr = cfg_.lr_init;
    state_.seed = cfg_.seed;
    state_.best_dev = kWorstDev;
    sync_freeze();
}

void Trainer::sync_freeze() {
    state_.vp_frozen = state_.epoch >= cfg_.vp_freeze_epoch;
    opt_.set_frozen(state_.vp_frozen ? model_.voiceprint_param_mask()
                                     : std::vector<bool>(opt_.num_params(), false));
}

void Trainer::restore(const TrainSnapshot& snapshot) {
    state_ = snapshot;
    opt_.set_lr(state_.lr);
    sync_freeze();
}

std::vector<LossBreakdown> Trainer::train_epoch(std::vector<MixtureExample>& data,
                                                const Corpus* corpus) {
    if (data.empty()) throw config_error("train_epoch: empty training set");
    const int epoch = state_.epoch;
    sync_freeze();

    // Per-epoch same-speaker reference redraw, in stable index order so the
    // draw sequence depends only on (seed, epoch).
    if (corpus) {
        std::mt19937_64 ref_rng(mix_seed(cfg_.seed, static_cast<uint64_t>(epoch), 0xD1CE));
        for (MixtureExample& ex : data) {
            if (ex.target_clip_index < 0) continue;
            std::vector<int> alt;
            for (int ci : corpus->clips_of(ex.target_speaker_id))
                if (ci != ex.target_clip_index) alt.push_back(ci);
            if (alt.empty()) continue;
            std::uniform_int_distribution<size_t> pick(0, alt.size() - 1);
            ex.reference = corpus->clips[static_cast<size_t>(alt[pick(ref_rng)])].audio;
        }
    }

    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::mt19937_64 shuffle_rng(mix_seed(cfg_.seed, static_cast<uint64_t>(epoch), 0x5F0F));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    std::vector<LossBreakdown> trace;
    std::vector<Tensor> params = model_.param_tensors();
    const size_t batch = static_cast<size_t>(cfg_.batch_size);
    for (size_t start = 0; start < order.size(); start += batch) {
        const size_t stop = std::min(order.size(), start + batch);
        const int batch_n = static_cast<int>(stop - start);
        opt_.zero_grad();
        LossBreakdown batch_bd;
        for (size_t k = start; k < stop; ++k) {
            const MixtureExample& ex = data[order[k]];
            WaseModel::Forward out = run_forward(model_, ex, cfg_.oracle_cues);
            auto [loss, bd] = compute_loss(out, ex, cfg_.loss_ratio, model_.config());
            if (!std::isfinite(bd.total))
                throw numeric_error("non-finite loss at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(trace.size()) + ": " +
                                    describe(bd));
            backward(loss);
            batch_bd.total += bd.total;
            batch_bd.si_snr_target_db += bd.si_snr_target_db;
            batch_bd.si_snr_interferer_db += bd.si_snr_interferer_db;
            batch_bd.ce_detect += bd.ce_detect;
        }
        const double inv = 1.0 / batch_n;
        for (Tensor& p : params)
            for (double& g : p.grad()) g *= inv;
        opt_.step();
        state_.step += 1;
        batch_bd.total *= inv;
        batch_bd.si_snr_target_db *= inv;
        batch_bd.si_snr_interferer_db *= inv;
        batch_bd.ce_detect *= inv;
        trace.push_back(batch_bd);
    }
    state_.epoch += 1;
    return trace;
}

bool Trainer::observe_dev_score(double dev_score) {
    if (dev_score > state_.best_dev) {
        state_.best_dev = dev_score;
        state_.epochs_since_improve = 0;
        return true;
    }
    state_.epochs_since_improve += 1;
    if (state_.lr <= cfg_.stop_lr && state_.epochs_since_improve >= cfg_.stop_patience) {
        state_.stop = true;
    } else if (state_.epochs_since_improve >= cfg_.lr_halve_patience) {
        state_.lr /= 2;
        opt_.set_lr(state_.lr);
        state_.epochs_since_improve = 0;
    }
    return false;
}

FitResult fit(Trainer& trainer, std::vector<MixtureExample>& train_set,
              const std::vector<MixtureExample>& dev_set, const Corpus* corpus,
              const std::string& out_dir, const EpochCallback& on_epoch) {
    const TrainConfig& cfg = trainer.config();
    WaseModel& model = trainer.model();

    std::ofstream log;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        log.open(out_dir + "/train_log.jsonl", std::ios::app);
        if (!log) throw io_error("cannot write training log under " + out_dir);
        json head;
        head["config"] = {{"model", json::parse(model_config_to_json(model.config()))},
                          {"train", json::parse(train_config_to_json(cfg))}};
        log << head.dump() << "\n";
        log.flush();
    }

    FitResult result;
    result.best_dev = trainer.state().best_dev;
    while (!trainer.state().stop && trainer.state().epoch < cfg.max_epochs) {
        const int epoch = trainer.state().epoch;
        const double lr_used = trainer.state().lr;
        const auto t0 = std::chrono::steady_clock::now();

        std::vector<LossBreakdown> trace = trainer.train_epoch(train_set, corpus);
        double train_loss = 0.0;
        for (const LossBreakdown& bd : trace) train_loss += bd.total;
        train_loss /= static_cast<double>(trace.size());

        EvalReport dev = evaluate(model, dev_set, cfg.oracle_cues);
        const bool improved = trainer.observe_dev_score(dev.mean_sisnri_db);
        const double wall_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        if (log) {
            json line = {{"epoch", epoch},
                         {"lr", lr_used},
                         {"train_loss", train_loss},
                         {"dev_sisnri", dev.mean_sisnri_db},
                         {"acc", dev.acc},
                         {"f1", dev.f1},
                         {"wall_s", wall_s}};
            log << line.dump() << "\n";
            log.flush();
        }
        if (!out_dir.empty()) {
            TrainSnapshot snap = trainer.state();
            result.last_ckpt = out_dir + "/last.ckpt";
            save_checkpoint(result.last_ckpt, model, &snap, &trainer.optimizer());
            if (improved) {
                result.best_ckpt = out_dir + "/best.ckpt";
                save_checkpoint(result.best_ckpt, model, &snap, &trainer.optimizer());
            }
        }
        if (improved) result.best_dev = trainer.state().best_dev;
        result.epochs_run += 1;
        if (on_epoch && !on_epoch(epoch, dev, train_loss)) break;
    }
    return result;
}

}  // namespace wase
