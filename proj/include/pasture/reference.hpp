#pragma once

#include <span>
#include <vector>

#include "pasture/field_synth.hpp"
#include "pasture/heightmap.hpp"
#include "pasture/planner.hpp"
#include "pasture/predictor.hpp"

// Plain serial implementations of the parallel kernels. Kept deliberately
// independent of the production code paths: tests compare the two and the
// benchmark tool times them against each other.
namespace pasture::reference {

// Direct double-loop kernel summation over cell centers.
HeightMap eval_field(const synth::DynamicField& field, int t);

HeightMap median_filter_3x3(const HeightMap& m);
HeightMap flat_conv_3x3(const HeightMap& m);

// Sorted-copy linear-interpolation percentile.
double percentile(std::span<const double> values, double q);

// Textbook mean and population variance of stored prediction passes.
void mc_mean_var(const std::vector<std::vector<HeightMap>>& raw, std::vector<HeightMap>& mean,
                 std::vector<HeightMap>& variance);

// Same-padding convolution written as straight nested loops.
nn::Tensor conv2d_forward(const nn::Conv2d& conv, const nn::Tensor& in);

// Gate-by-gate recurrent step used as the forward-pass oracle.
void convlstm_step(const nn::ConvLstmCell& cell, const nn::Tensor& x, const nn::Tensor& h_prev,
                   const nn::Tensor& c_prev, nn::Tensor& h, nn::Tensor& c);

// Literal greedy sweep over a materialized ground set: every factor is argmaxed
// and checked exactly once. Quadratic; only for small instances.
plan::Policy greedy_plan(const plan::GroundSet& ground, const plan::VarianceSet& variance,
                         const plan::PlannerWeights& w, const plan::BudgetConstraint& c,
                         bool stop_at_nonpositive = false);

}  // namespace pasture::reference
