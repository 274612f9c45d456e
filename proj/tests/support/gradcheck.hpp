#pragma once

// Central finite differences against analytic gradients, shared by the unit
// tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>

#include "umeg/nn.hpp"

namespace umeg::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|); entries where both are below `floor` are skipped.
inline GradCheckResult grad_check(std::span<nn::Parameter* const> params,
                                  const std::function<double()>& loss,
                                  const std::function<void()>& analytic,
                                  double h = 1e-5, double floor = 1e-9) {
  nn::zero_grads(params);
  analytic();
  GradCheckResult r;
  for (nn::Parameter* p : params) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double up = loss();
      p->value[i] = keep - h;
      const double down = loss();
      p->value[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double a = p->grad[i];
      const double scale = std::max(std::abs(a), std::abs(numeric));
      if (scale < floor) continue;
      ++r.checked;
      const double rel = std::abs(a - numeric) / scale;
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

}  // namespace umeg::testing
