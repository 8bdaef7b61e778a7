#pragma once

// Central finite-difference oracle for autodiff checks. Rebuilds the graph
// from scratch per probe so it stays independent of the tape's backward pass.

#include <functional>

#include "uflow/tape.hpp"

namespace uflow::test {

// f builds a scalar loss from the current parameter values.
// Returns the max relative error over all parameter entries.
inline double gradcheck(std::vector<Parameter*> params,
                        const std::function<Value(Tape&)>& f, float h = 2e-2f,
                        bool fourth_order = true) {
    // analytic
    for (auto* p : params) p->zero_grad();
    {
        Tape tape;
        Value loss = f(tape);
        tape.backward(loss);
    }
    auto eval = [&](Parameter* p, size_t i, float delta) {
        float orig = p->value.data[i];
        p->value.data[i] = orig + delta;
        Tape tape;
        double out = tape.val(f(tape)).data[0];
        p->value.data[i] = orig;
        return out;
    };
    double worst = 0.0;
    for (auto* p : params) {
        for (size_t i = 0; i < p->value.data.size(); ++i) {
            // 4th-order central stencil: large h keeps float32 rounding noise
            // down while the truncation term stays negligible.
            double numeric;
            if (fourth_order) {
                numeric = (8.0 * (eval(p, i, h) - eval(p, i, -h)) -
                           (eval(p, i, 2 * h) - eval(p, i, -2 * h))) /
                          (12.0 * h);
            } else {
                numeric = (eval(p, i, h) - eval(p, i, -h)) / (2.0 * h);
            }
            double analytic = p->grad.data[i];
            double denom = std::max({1.0, std::abs(numeric), std::abs(analytic)});
            worst = std::max(worst, std::abs(numeric - analytic) / denom);
        }
    }
    return worst;
}

}  // namespace uflow::test
