#pragma once

#include <vector>

#include "volwmc/wmc.hpp"

namespace volwmc::exotics {

// Up-and-out call, monitored at every path time up to and including expiry
// (t = 0 included). A path is knocked out once it reaches the barrier.
double barrier_call_price(const wmc::PathSet& paths, const wmc::WeightVector& weights, double strike,
                          double barrier, double expiry);

struct BarrierPoint {
    double barrier = 0.0;
    double price = 0.0;
    double std_error = 0.0; // sqrt(sum p_i^2 (g_i - price)^2)
};

std::vector<BarrierPoint> barrier_sweep(const wmc::PathSet& paths, const wmc::WeightVector& weights,
                                        double strike, const std::vector<double>& barriers, double expiry);

// from, from + step, ..., up to `to` inclusive (within half a step).
std::vector<double> barrier_grid(double from, double to, double step);

// Weighted vanilla call on the same monitoring grid.
double vanilla_call_price(const wmc::PathSet& paths, const wmc::WeightVector& weights, double strike,
                          double expiry);

} // namespace volwmc::exotics
