// Flat key=value experiment configuration: parsing, validation, and
// re-emission of the fully resolved form.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "modbal/net.hpp"
#include "modbal/synth.hpp"

namespace modbal {

struct ExperimentConfig {
    std::string method = "passion";  // baseline | moddrop | passion
    bool toggle_pixel = true;
    bool toggle_proto = true;
    bool toggle_delta = true;
    bool toggle_beta = true;

    double lr = 2e-4;           // initial learning rate, per step
    double weight_decay = 1e-4;
    double poly_p = 0.9;        // lr(t) = lr0 * (1 - t/T)^p
    int epochs = 40;
    double tau = 4.0;
    double lambda1 = 0.5;
    double lambda2 = 0.1;
    double gamma = 0.01;
    uint64_t seed = 1;
    bool augment = false;

    BackboneConfig backbone;

    DatasetSpec data;           // data.n_samples = training set size
    int test_samples = 30;
    std::string dataset_train;  // optional PASS container paths; generated
    std::string dataset_test;   // from `data` when empty

    std::vector<double> targets = {0.2, 0.5, 0.8};
    std::string presence;       // optional presence manifest path

    std::string out_dir = "out";
};

void validate(const ExperimentConfig& cfg);

std::map<std::string, std::string> parse_key_values(const std::string& text);
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Dataset spec files reuse the data.* keys of the experiment format.
DatasetSpec parse_dataset_spec(const std::string& text);
DatasetSpec load_dataset_spec(const std::string& path);

// Fully resolved config, re-parseable, with unit comments.
std::string config_text(const ExperimentConfig& cfg);

// Deterministic mode (default on) pins every stream to the configured
// seed. MODBAL_DETERMINISTIC=0 mixes wall-clock entropy into run seeds.
bool deterministic_mode();

}  // namespace modbal
