#ifndef FBA_HBA_HPP
#define FBA_HBA_HPP

// HBA node: a pioneer fast phase at iteration 0 in front of the RBA rounds,
// with steps shifted to 3λ (init), 5λ (pre-commit) and 7λ (commit).

#include <stdexcept>
#include <utility>

#include "fba/engine.hpp"

namespace fba {

class HbaNode : public AgreementNode {
 public:
  explicit HbaNode(NodeSetup setup) : AgreementNode(Protocol::Hba, std::move(setup)) {}
};

inline HbaNode hba_init(NodeSetup setup) { return HbaNode(std::move(setup)); }

/// Analytic mean decision time: 4λ with an honest pioneer, 3λ + 8λ otherwise.
inline Duration hba_expected_latency(Duration lambda, double p_honest) {
  if (lambda < Duration::zero() || p_honest < 0.0 || p_honest > 1.0)
    throw std::invalid_argument("hba_expected_latency: arguments out of range");
  const double l = static_cast<double>(lambda.count());
  return Duration(static_cast<Duration::rep>(p_honest * 4.0 * l + (1.0 - p_honest) * 11.0 * l + 0.5));
}

/// Same expectation in units of λ.
inline double hba_expected_latency_lambdas(double p_honest) { return p_honest * 4.0 + (1.0 - p_honest) * 11.0; }

}  // namespace fba

#endif  // FBA_HBA_HPP
