// Experiment runner: baseline, moddrop, and passion training regimes with
// preference tracking, RP logging, evaluation, and artifact emission.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "modbal/config.hpp"
#include "modbal/losses.hpp"
#include "modbal/metrics.hpp"
#include "modbal/net.hpp"
#include "modbal/pref.hpp"
#include "modbal/presence.hpp"

namespace modbal {

// Resolved loss assembly for one method + toggle set.
struct MethodPlan {
    bool use_reg = false;     // baseline per-modality supervision
    bool moddrop = false;     // per-step modality dropout on top of presence
    bool pixel = false;
    bool proto = false;
    bool delta_gate = false;  // off -> delta treated as 1 everywhere
    bool beta_update = false; // off -> beta frozen at 1/(1-MR)
};

MethodPlan build_method_loss(const std::string& method, bool toggle_pixel, bool toggle_proto,
                             bool toggle_delta, bool toggle_beta);

// lr0 * (1 - t/T)^p; t in [0, T].
real poly_lr(int64_t step, int64_t total_steps, real lr0, real p);

// Per-iteration modality dropout on top of a fixed presence row: each
// available modality is dropped with probability 1/2, with at least one
// survivor re-enabled uniformly at random.
std::vector<uint8_t> moddrop_row(const std::vector<uint8_t>& row, Rng& rng);

struct RpLogRow {
    int epoch = 0;
    int modality = 0;
    real mean_rp = 0;
    real beta = 0;
};

std::string rp_log_csv(const std::vector<RpLogRow>& rows);
std::vector<RpLogRow> parse_rp_log_csv(const std::string& text);

// One curve of epoch-mean RP per modality plus a zero line, as SVG. The
// exact values ride along in data-values attributes.
std::string rp_plot_svg(const std::vector<RpLogRow>& rows);
void emit_rp_plot(const std::vector<RpLogRow>& rows, const std::string& path);

// Losses and gradients for one sample under a method plan. Gradients are
// assembled only when want_grads is set.
struct StepOutput {
    real seg = 0;
    std::map<int, real> reg;
    std::map<int, real> pixel;
    std::map<int, real> proto;
    std::map<int, real> dgap;
    SamplePreference pref;
    real total = 0;
    HeadGrads grads;
};

StepOutput compute_step(const Backbone& net, const ForwardState& st, const LabelMap& label,
                        const MethodPlan& plan, const PreferenceState& state,
                        const ExperimentConfig& cfg, bool want_grads);

struct RunResult {
    std::optional<Backbone> model;
    std::vector<RpLogRow> rp_log;
    EvalReport report;
    std::vector<real> loss_trace;  // mean total loss per epoch
};

// Full training + evaluation given in-memory data. The presence matrix is
// applied to the training set before the first epoch and never re-drawn.
RunResult train_and_evaluate(const ExperimentConfig& cfg,
                             const std::vector<MultiModalSample>& train_full,
                             const std::vector<MultiModalSample>& test_full,
                             const PresenceMatrix& presence);

struct RunArtifacts {
    std::string checkpoint;
    std::string rp_log;
    std::string report_csv;
    std::string report_text;
    std::string resolved_config;
    std::string rp_plot;
    std::string presence_manifest;
};

// End-to-end: builds or loads data and presence, trains, evaluates, and
// writes every artifact under cfg.out_dir.
RunArtifacts run_experiment(const ExperimentConfig& cfg);

}  // namespace modbal
