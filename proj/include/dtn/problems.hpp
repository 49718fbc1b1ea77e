#pragma once

#include "dtn/grid.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dtn {

/// Names accepted by catalog() and the CLI's --problem flag.
const std::vector<std::string>& catalog_names();

/// Constructs one of the eleven named test problems:
///   laplace                b = c = d = 0
///   diffconv1..4           constant / rotational / source-sink convection
///   helmholtz1..4          d = -100, -4005, -(lambda_10 - 1e-5), -(2 pi n/40)^2
///   random1, random2       network Laplacian, conductivities in [1,2] / [1,1000]
/// Throws std::invalid_argument for unknown names.
ProblemSpec catalog(const std::string& name, int n, std::uint64_t seed = 0);

/// Eigenvalue of the discrete Dirichlet Laplacian on the unknowns of an
/// n x n grid (same 1/h^2 scaling as discretize):
///   lambda_{p,q} = (1/h^2) (4 - 2 cos(p pi /(n-1)) - 2 cos(q pi /(n-1))).
/// Requires 1 <= p,q <= n-2.
double discrete_eigenvalue(int p, int q, int n);

/// k-th smallest eigenvalue (1-based, multiplicity counted, ties broken by
/// (p,q) lexicographic order). lambda_10 = discrete_eigenvalue_kth(10, n).
double discrete_eigenvalue_kth(int k, int n);

}  // namespace dtn
