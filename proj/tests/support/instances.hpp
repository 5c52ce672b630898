#pragma once

#include "rmpc/model.hpp"
#include "rmpc/rqp.hpp"

#include <random>

namespace rmpc::testing {

struct InstanceBounds {
  int max_nx = 3;
  int max_nu = 2;
  int max_horizon = 5;
  int max_scenarios = 8;
};

/// Random well-posed system: stable-ish dynamics, PSD weights, input boxes
/// and loose state boxes that keep a strictly feasible interior.
UncertainSystem random_system(std::mt19937_64& rng, const InstanceBounds& bounds = {});

/// Random data on a prescribed branching structure; branching[k] = M_k for
/// k = 0..N_r. Input boxes only.
UncertainSystem structured_system(std::mt19937_64& rng, int nx, int nu, int horizon,
                                  const std::vector<int>& branching);

/// n_x = n_u = 1, at most two scenarios and at most 14 inequality rows
/// including the epigraph rows.
UncertainSystem tiny_system(std::mt19937_64& rng);

/// Adds one realization at a branched stage k <= robust_horizon, keeping the
/// existing ones (and their order). Returns false if the scenario count
/// would exceed `max_scenarios`.
bool add_realization(UncertainSystem& sys, int stage, std::mt19937_64& rng,
                     int max_scenarios = 8);

int scenario_count(const UncertainSystem& sys);

Rqp to_rqp(const UncertainSystem& sys);

/// Strictly interior point with random entries of moderate size.
Iterate random_interior_iterate(const Rqp& rqp, std::mt19937_64& rng);

}  // namespace rmpc::testing
