// Simulates a random-intercept dataset, fits it, and prints the estimates
// next to the generating values.

#include <iostream>

#include "rcml/rcml.hpp"

int main() {
  rcml::SimConfig sim;
  sim.n_individuals = 200;
  sim.n_obs_min = sim.n_obs_max = 10;
  sim.p = 2;
  sim.q = 1;
  sim.alpha = rcml::Vector(2);
  sim.alpha << 1.0, -0.5;
  sim.d = rcml::Matrix::Constant(1, 1, 0.5);
  sim.sigma2 = rcml::Vector::Ones(1);
  sim.seed = 2024;

  const auto generated = rcml::generate(sim);
  const auto result = rcml::fit(generated.data, rcml::DispersionSpec::full_symmetric(1));

  std::cout << "converged: " << std::boolalpha << result.converged << " after " << result.iterations
            << " iterations\n";
  std::cout << "d_hat = " << result.d_hat(0, 0) << "  (true 0.5)\n";
  std::cout << "alpha_hat = " << result.alpha_hat.transpose() << "  (true " << sim.alpha.transpose() << ")\n";
  std::cout << "restricted log-likelihood = " << result.loglik << "\n";
  return result.converged ? 0 : 2;
}
