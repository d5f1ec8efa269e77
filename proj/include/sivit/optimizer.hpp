#pragma once

#include <string>
#include <utility>
#include <vector>

#include "sivit/tensor.hpp"

namespace sivit {

// Cosine decay from lr0 at step 0 down to lr0/20 at total_steps:
//   lr_min + 0.5 * (lr0 - lr_min) * (1 + cos(pi * step / total_steps)).
double cosine_lr(int step, int total_steps, double lr0);

// Adam with bias correction and decoupled weight decay. The optimizer reads
// each parameter's accumulated gradient at step() time; parameters whose
// gradient was never touched this step are treated as zero-gradient (their
// moments decay and weight decay still applies).
class Adam {
  public:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    Adam(std::vector<std::pair<std::string, Tensor>> params, double weight_decay);

    void step(double lr);
    long steps_taken() const { return t_; }

  private:
    struct Slot {
        Tensor param;
        std::vector<double> m, v;
    };
    std::vector<Slot> slots_;
    double weight_decay_;
    long t_ = 0;
};

}  // namespace sivit
