#pragma once

#include "plus/tape.hpp"

namespace plus::rl {

// pairwise logistic preference loss: -log sigma(r_chosen - r_rejected),
// computed through log-sigmoid so large gaps stay finite
Tape::NodeId btl_loss(Tape& tape, Tape::NodeId r_chosen, Tape::NodeId r_rejected);

// scalar double-precision references for the two algebraic forms of the same
// quantity: exp-normalized and sigmoid-of-difference
double btl_loss_expform(double r_a, double r_b);
double btl_loss_sigmoidform(double r_a, double r_b);

// distributional preference loss: each side is (mean, variance); the win
// probability is Phi((mu_a - mu_b) / sqrt(var_a + var_b))
Tape::NodeId dpl_loss(Tape& tape, Tape::NodeId mu_c, Tape::NodeId var_c, Tape::NodeId mu_r, Tape::NodeId var_r);

// scalar double-precision reference for the distributional loss
double dpl_loss_ref(double mu_c, double var_c, double mu_r, double var_r);

}  // namespace plus::rl
