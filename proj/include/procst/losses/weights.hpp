#pragma once

#include "procst/core/error.hpp"

namespace procst {

struct LossWeights {
  double adv = 1.0;
  double style = 10.0;
  double cyclic = 1.0;
  double labels = 3.0;
  double content = 1.0 / 30.0;
  double gram = 1.0;
  double tv = 1.0 / 30.0;
  double gp = 10.0;

  void validate() const {
    for (double v : {adv, style, cyclic, labels, content, gram, tv, gp})
      if (v < 0) throw ConfigError("loss weights must be >= 0");
  }
};

}  // namespace procst
