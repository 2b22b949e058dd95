#pragma once

#include "run_config.hpp"

namespace atnlab::cli {

void setup_train_classifier(CLI::App* app, RunConfig& cfg);
void setup_train_atn(CLI::App* app, RunConfig& cfg);
void setup_attack(CLI::App* app, RunConfig& cfg);
void setup_eval(CLI::App* app, RunConfig& cfg);

int run_train_classifier(const RunConfig& cfg);
int run_train_atn(const RunConfig& cfg);
int run_attack(const RunConfig& cfg);
int run_eval(const RunConfig& cfg);

}  // namespace atnlab::cli
