#pragma once

#include <cstddef>

#include "drcusum/distributions.hpp"

namespace drcusum {

// Per-sample log-likelihood ratio log(p(x)/q(x)) used by CuSum recursions.
// Implementations are immutable after construction and safe to call from
// many threads at once.
class LlrScorer {
public:
    virtual ~LlrScorer() = default;
    virtual double llr(ObsView x) const = 0;
    virtual std::size_t dim() const = 0;
};

}  // namespace drcusum
