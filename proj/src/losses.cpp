#include "plus/losses.hpp"

#include <cmath>

namespace plus::rl {

Tape::NodeId btl_loss(Tape& tape, Tape::NodeId r_chosen, Tape::NodeId r_rejected) {
    return tape.scale(tape.logsigmoid(tape.sub(r_chosen, r_rejected)), -1.0f);
}

double btl_loss_expform(double r_a, double r_b) {
    // -log( exp(r_a) / (exp(r_a) + exp(r_b)) ), stabilized by the max
    double m = std::max(r_a, r_b);
    double za = std::exp(r_a - m), zb = std::exp(r_b - m);
    return -std::log(za / (za + zb));
}

double btl_loss_sigmoidform(double r_a, double r_b) {
    double d = r_a - r_b;
    // -log sigma(d) = log(1 + exp(-d)), stable on both branches
    return d >= 0 ? std::log1p(std::exp(-d)) : -d + std::log1p(std::exp(d));
}

double dpl_loss_ref(double mu_c, double var_c, double mu_r, double var_r) {
    const double z = (mu_c - mu_r) / std::sqrt(var_c + var_r);
    return -std::log(0.5 * std::erfc(-z / std::sqrt(2.0)));
}

Tape::NodeId dpl_loss(Tape& tape, Tape::NodeId mu_c, Tape::NodeId var_c, Tape::NodeId mu_r, Tape::NodeId var_r) {
    const Tensor& vc = tape.value(var_c);
    const Tensor& vr = tape.value(var_r);
    for (float v : vc.data)
        if (!(v > 0.0f)) throw NumericError("dpl_loss: non-positive chosen variance");
    for (float v : vr.data)
        if (!(v > 0.0f)) throw NumericError("dpl_loss: non-positive rejected variance");
    Tape::NodeId denom = tape.sqrt(tape.add(var_c, var_r));
    Tape::NodeId z = tape.mul(tape.sub(mu_c, mu_r), tape.exp(tape.scale(tape.log(denom), -1.0f)));
    return tape.scale(tape.log(tape.normcdf(z)), -1.0f);
}

}  // namespace plus::rl
