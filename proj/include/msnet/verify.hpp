#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "msnet/matrix.hpp"
#include "msnet/network.hpp"

namespace msnet {

// Central-difference gradient of a scalar function of a symmetric matrix.
// Off-diagonal slots perturb entries (i,j) and (j,i) jointly, so slot (i,j)
// is comparable against G_ij + G_ji of an analytic gradient held as a full
// array; the diagonal is perturbed singly and compares against G_ii.
Matrix finite_diff_sym(const std::function<double(const Matrix&)>& fun, const Matrix& s,
                       double h);

struct TensorCheck {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  bool pass = true;
  bool kink_adjacent = false;  // rectifier spectrum within 1e-7 of the threshold;
                               // reported but excluded from the verdict
};

struct GradCheckReport {
  std::string target;
  double tolerance = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<TensorCheck> tensors;
  bool pass = true;
};

struct LayerCheckSpec {
  std::string kind;   // bimap | reeig | logeig | subsec-logeig | trilcan | fc | softmax-ce
  int dim = 6;        // matrix dim; grid side for subsec-logeig; classes for fc/softmax-ce
  int dim_in = 0;     // input width for bimap/fc; 0 picks a default
  double eps = 1e-2;  // rectifier threshold used by the reeig check
  double h = 1e-5;
  bool place_kink = false;  // put one eigenvalue within 1e-7 of eps (reeig only)
};

// Conditioned random inputs (eigengap >= 1e-3, spectrum a factor 10 away
// from the rectifier threshold), random downstream gradient, probe loss
// <grad_out, output>; analytic backward versus the finite-difference oracle,
// aggregated over seeds.
GradCheckReport gradcheck_layer(const LayerCheckSpec& spec,
                                const std::vector<std::uint64_t>& seeds, double tol);

// End-to-end softmax cross-entropy loss of a freshly built model per seed;
// finite differences over every parameter entry and every (symmetric-pair)
// input entry.
GradCheckReport gradcheck_network(const MsNetConfig& config,
                                  const std::vector<std::uint64_t>& seeds, double tol,
                                  int batch_size = 1, double h = 1e-5);

// Validates the oracle against two closed forms before anything else is
// trusted: the gradient of the trace is the identity, the gradient of
// log-det is the inverse. Throws on disagreement.
void oracle_self_check();

std::string report_text(const GradCheckReport& report);

// CSV with header: target,tensor,max_rel_err,max_abs_err,pass
std::string report_csv(const GradCheckReport& report);

}  // namespace msnet
