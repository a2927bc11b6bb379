#pragma once

#include "trawl/tensor.hpp"

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace trawl {

enum class InitMethod { Random, Hosvd };

InitMethod parse_init_method(std::string_view text);
std::string_view to_string(InitMethod init);

struct FitOptions {
    int max_iters = 200;
    double tol = 1e-7;  // threshold on the relative change of the relative error
    std::uint64_t seed = 0;
    InitMethod init = InitMethod::Hosvd;
    int restarts = 0;  // additional randomly initialized runs

    // Throws std::invalid_argument unless tol > 0, max_iters >= 1, restarts >= 0.
    void validate() const;
};

struct FitReport {
    int iterations_run = 0;
    double relative_error = 0.0;
    bool converged = false;
    int restart_chosen = 0;
    // Set when a normal-equation system had to be ridge regularized.
    bool regularized = false;
    // Relative error after each iteration of the chosen run.
    std::vector<double> error_history;

    friend bool operator==(const FitReport&, const FitReport&) = default;
};

/**
 * Rank-R CP model: sum_r weights[r] * a_r o b_r o c_r.
 *
 * Factor columns have unit norm and weights are sorted by non-increasing
 * magnitude (stable on the original column order).
 */
struct CPModel {
    Vector weights;
    std::array<Matrix, 3> factors;

    std::size_t rank() const noexcept { return static_cast<std::size_t>(weights.size()); }
    Shape shape() const;

    friend bool operator==(const CPModel& a, const CPModel& b) {
        return a.weights == b.weights && a.factors == b.factors;
    }
};

// Core tensor G with orthonormal-column factors A, B, C.
struct TuckerModel {
    DenseTensor core{Shape{1, 1, 1}};
    std::array<Matrix, 3> factors;

    Shape shape() const;

    friend bool operator==(const TuckerModel&, const TuckerModel&) = default;
};

using TuckerRanks = std::array<std::size_t, 3>;

// Largest rank accepted by cp_als: min(I*J, J*K, I*K).
std::size_t max_cp_rank(const Shape& shape);

// Fits a rank-`rank` CP model by alternating least squares. Restart 0 uses
// opts.init; restarts 1..opts.restarts use seeded random initializations and
// the run with the lowest final error wins. 2-mode input is treated as
// I x J x 1.
struct CPFit {
    CPModel model;
    FitReport report;
};
CPFit cp_als(const DenseTensor& t, std::size_t rank, const FitOptions& opts = {});

DenseTensor cp_reconstruct(const CPModel& m);

TuckerModel hosvd(const DenseTensor& t, const TuckerRanks& ranks);

struct TuckerFit {
    TuckerModel model;
    FitReport report;
};
TuckerFit tucker_hooi(const DenseTensor& t, const TuckerRanks& ranks, const FitOptions& opts = {});

DenseTensor tucker_reconstruct(const TuckerModel& m);

// Scalar rank R expands to [R, R, min(R, K)] where K is the stacking depth.
TuckerRanks expand_tucker_rank(std::size_t rank, const Shape& shape);

// Best rank-`rank` approximation U_r S_r V_r^T.
Matrix truncated_svd_matrix(const Matrix& m, std::size_t rank);

// ||original - approx||_F / ||original||_F.
double relative_error(const DenseTensor& original, const DenseTensor& approx);

}  // namespace trawl
