#include "trawl/decomposition.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace trawl {

namespace {

// Errors at or below this level are indistinguishable from round-off in the
// reconstruction, so the stopping rule treats them as converged.
constexpr double kErrorFloor = 10 * std::numeric_limits<double>::epsilon();

std::mt19937_64 make_rng(std::uint64_t seed, int restart) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(restart)};
    return std::mt19937_64(seq);
}

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = normal(rng);
    return m;
}

Matrix orthonormal_random(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    const Matrix g = gaussian_matrix(rows, cols, rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    return qr.householderQ() * Matrix::Identity(rows, cols);
}

// Leading `count` left singular vectors of m. Uses the full U when the thin
// factor has fewer than `count` columns.
Matrix leading_left_singular_vectors(const Matrix& m, Eigen::Index count) {
    const bool need_full = count > std::min(m.rows(), m.cols());
    Eigen::BDCSVD<Matrix> svd(m, need_full ? Eigen::ComputeFullU : Eigen::ComputeThinU);
    return svd.matrixU().leftCols(count);
}

// Restart selection. Errors at the round-off floor all count as exact, so the
// earliest restart to get there is kept.
bool improves_on(double candidate, double incumbent) {
    return std::max(candidate, kErrorFloor) < std::max(incumbent, kErrorFloor);
}

bool stop_iterating(double previous, double current, double tol) {
    if (current <= kErrorFloor) return true;
    return previous - current < tol * previous;
}

void check_tucker_ranks(const Shape& shape, const TuckerRanks& ranks) {
    for (std::size_t n = 0; n < 3; ++n)
        if (ranks[n] < 1 || ranks[n] > shape[n])
            throw std::invalid_argument("Tucker rank " + std::to_string(ranks[n]) + " for mode " +
                                        std::to_string(n) + " must lie in [1, " +
                                        std::to_string(shape[n]) + "]");
}

// --- CP-ALS ---------------------------------------------------------------

struct CPRun {
    std::array<Matrix, 3> factors;
    Vector weights;
    FitReport report;
};

std::array<Matrix, 3> cp_initial_factors(const std::array<Matrix, 3>& unfoldings,
                                         Eigen::Index rank, InitMethod init,
                                         std::mt19937_64& rng) {
    std::array<Matrix, 3> factors;
    for (std::size_t n = 0; n < 3; ++n) {
        const Eigen::Index rows = unfoldings[n].rows();
        if (init == InitMethod::Random) {
            factors[n] = gaussian_matrix(rows, rank, rng);
        } else {
            const Eigen::Index available = std::min(rank, rows);
            Matrix f(rows, rank);
            f.leftCols(available) = leading_left_singular_vectors(unfoldings[n], available);
            if (available < rank)
                f.rightCols(rank - available) = gaussian_matrix(rows, rank - available, rng);
            factors[n] = std::move(f);
        }
        factors[n].colwise().normalize();
    }
    return factors;
}

// Solves F * gram = rhs for F. Falls back to a ridge of 1e-12 * trace(gram)
// when the Cholesky factorization fails or is numerically singular.
Matrix solve_normal_equations(const Matrix& gram, const Matrix& rhs, bool& regularized) {
    Eigen::LLT<Matrix> llt(gram);
    const bool singular = llt.info() != Eigen::Success ||
                          llt.rcond() < std::numeric_limits<double>::epsilon();
    if (singular) {
        regularized = true;
        double ridge = 1e-12 * gram.trace();
        if (!(ridge > 0)) ridge = 1e-12;
        Matrix shifted = gram;
        shifted.diagonal().array() += ridge;
        llt.compute(shifted);
    }
    // gram is symmetric, so F = rhs * gram^{-1} = (gram^{-1} * rhs^T)^T.
    return llt.solve(rhs.transpose()).transpose();
}

// Normalizes columns in place and returns their former norms. Zero columns
// stay zero with a zero norm.
Vector normalize_columns(Matrix& f) {
    Vector norms(f.cols());
    for (Eigen::Index r = 0; r < f.cols(); ++r) {
        norms(r) = f.col(r).norm();
        if (norms(r) > 0) f.col(r) /= norms(r);
    }
    return norms;
}

double cp_unfolded_error(const Matrix& x0, const std::array<Matrix, 3>& f, const Vector& weights,
                         double norm_x) {
    const Matrix approx = f[0] * weights.asDiagonal() * khatri_rao(f[2], f[1]).transpose();
    return (x0 - approx).norm() / norm_x;
}

// Factors with the weights folded into the last mode, the form in which two
// iterates can be combined.
std::array<Matrix, 3> absorbed(const std::array<Matrix, 3>& f, const Vector& weights) {
    return {f[0], f[1], f[2] * weights.asDiagonal()};
}

Matrix cp_unfolded(const Matrix& a, const Matrix& b, const Matrix& c) {
    return a * khatri_rao(c, b).transpose();
}

// Real roots of sum_k coeffs[k] s^k via companion-matrix eigenvalues.
std::vector<double> real_roots(std::vector<double> coeffs) {
    double scale = 0;
    for (double v : coeffs) scale = std::max(scale, std::abs(v));
    while (coeffs.size() > 1 && std::abs(coeffs.back()) <= 1e-14 * scale) coeffs.pop_back();
    const auto degree = static_cast<Eigen::Index>(coeffs.size()) - 1;
    if (degree < 1) return {};
    Matrix companion = Matrix::Zero(degree, degree);
    companion.bottomLeftCorner(degree - 1, degree - 1).setIdentity();
    for (Eigen::Index i = 0; i < degree; ++i)
        companion(i, degree - 1) = -coeffs[static_cast<std::size_t>(i)] / coeffs.back();
    Eigen::EigenSolver<Matrix> eig(companion, false);
    std::vector<double> roots;
    for (Eigen::Index i = 0; i < degree; ++i) {
        const auto z = eig.eigenvalues()(i);
        if (std::abs(z.imag()) <= 1e-8 * std::max(1.0, std::abs(z.real()))) roots.push_back(z.real());
    }
    return roots;
}

// Exact line search along the last sweep's move. With the previous iterate P
// and the new one N, the residual of P + s (N - P) is a cubic in s, so the
// squared error is a degree-6 polynomial whose minimizer is found from the
// roots of its derivative. The jump is kept only if it lowers the error.
bool line_search_jump(const std::array<Matrix, 3>& prev, const Matrix& x0, double norm_x,
                      std::array<Matrix, 3>& factors, Vector& weights, double& err) {
    const auto cur = absorbed(factors, weights);
    const Matrix &a = prev[0], &b = prev[1], &c = prev[2];
    const Matrix da = cur[0] - a, db = cur[1] - b, dc = cur[2] - c;
    const std::array<Matrix, 4> e{
        x0 - cp_unfolded(a, b, c),
        -(cp_unfolded(da, b, c) + cp_unfolded(a, db, c) + cp_unfolded(a, b, dc)),
        -(cp_unfolded(da, db, c) + cp_unfolded(da, b, dc) + cp_unfolded(a, db, dc)),
        -cp_unfolded(da, db, dc)};
    std::vector<double> poly(7, 0.0);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) poly[i + j] += (e[i].array() * e[j].array()).sum();
    std::vector<double> slope(6);
    for (std::size_t k = 1; k < 7; ++k) slope[k - 1] = static_cast<double>(k) * poly[k];

    auto value = [&](double s) {
        double v = 0;
        for (std::size_t k = 7; k-- > 0;) v = v * s + poly[k];
        return v;
    };
    double best_s = 1.0;
    for (double s : real_roots(slope))
        if (s > 0 && value(s) < value(best_s)) best_s = s;
    if (best_s == 1.0) return false;

    std::array<Matrix, 3> cand;
    Vector cand_weights = Vector::Ones(weights.size());
    for (std::size_t n = 0; n < 3; ++n) {
        cand[n] = prev[n] + best_s * (cur[n] - prev[n]);
        cand_weights = cand_weights.cwiseProduct(normalize_columns(cand[n]));
    }
    const double cand_err = cp_unfolded_error(x0, cand, cand_weights, norm_x);
    if (!(cand_err < err)) return false;
    factors = std::move(cand);
    weights = std::move(cand_weights);
    err = cand_err;
    return true;
}

CPRun cp_single_run(const std::array<Matrix, 3>& unfoldings, double norm_x, Eigen::Index rank,
                    InitMethod init, const FitOptions& opts, int restart) {
    auto rng = make_rng(opts.seed, restart);
    CPRun run;
    run.factors = cp_initial_factors(unfoldings, rank, init, rng);
    run.weights = Vector::Ones(rank);
    auto& [a, b, c] = run.factors;

    double previous = std::numeric_limits<double>::infinity();
    for (int iter = 1; iter <= opts.max_iters; ++iter) {
        const auto before = absorbed(run.factors, run.weights);
        for (std::size_t n = 0; n < 3; ++n) {
            const Matrix& p = n == 0 ? c : (n == 1 ? c : b);
            const Matrix& q = n == 0 ? b : a;
            const Matrix gram = (p.transpose() * p).cwiseProduct(q.transpose() * q);
            const Matrix mttkrp = unfoldings[n] * khatri_rao(p, q);
            run.factors[n] = solve_normal_equations(gram, mttkrp, run.report.regularized);
            run.weights = normalize_columns(run.factors[n]);
        }
        double err = cp_unfolded_error(unfoldings[0], run.factors, run.weights, norm_x);
        if (iter > 1 && err > kErrorFloor)
            line_search_jump(before, unfoldings[0], norm_x, run.factors, run.weights, err);
        run.report.error_history.push_back(err);
        run.report.iterations_run = iter;
        run.report.relative_error = err;
        if (iter > 1 && stop_iterating(previous, err, opts.tol)) {
            run.report.converged = true;
            break;
        }
        if (err <= kErrorFloor) {
            run.report.converged = true;
            break;
        }
        previous = err;
    }
    return run;
}

CPModel canonical_cp_model(std::array<Matrix, 3> factors, Vector weights) {
    const Eigen::Index rank = weights.size();
    for (auto& f : factors) {
        const Vector norms = normalize_columns(f);
        weights = weights.cwiseProduct(norms);
    }
    for (Eigen::Index r = 0; r < rank; ++r) {
        if (weights(r) != 0) continue;
        // Keep the unit-norm invariant for components that vanished.
        for (auto& f : factors)
            if (f.col(r).norm() == 0) {
                f.col(r).setZero();
                f(0, r) = 1.0;
            }
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(rank));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index x, Eigen::Index y) {
        return std::abs(weights(x)) > std::abs(weights(y));
    });

    CPModel model;
    model.weights.resize(rank);
    for (std::size_t n = 0; n < 3; ++n) model.factors[n].resize(factors[n].rows(), rank);
    for (Eigen::Index r = 0; r < rank; ++r) {
        const auto src = order[static_cast<std::size_t>(r)];
        model.weights(r) = weights(src);
        for (std::size_t n = 0; n < 3; ++n) model.factors[n].col(r) = factors[n].col(src);
    }
    return model;
}

// --- Tucker -----------------------------------------------------------------

// Core and relative error for fixed orthonormal factors.
std::pair<DenseTensor, double> tucker_core_and_error(const DenseTensor& x,
                                                     const std::array<Matrix, 3>& factors,
                                                     double norm_x) {
    DenseTensor core = x;
    for (std::size_t n = 0; n < 3; ++n) core = mode_n_product(core, factors[n].transpose(), n);
    const DenseTensor approx = tucker_reconstruct(TuckerModel{core, factors});
    double err = 0.0;
    if (norm_x > 0) err = relative_error(x, approx);
    return {std::move(core), err};
}

struct TuckerRun {
    TuckerModel model;
    FitReport report;
};

TuckerRun hooi_single_run(const DenseTensor& x, double norm_x, const TuckerRanks& ranks,
                          InitMethod init, const FitOptions& opts, int restart) {
    std::array<Matrix, 3> factors;
    if (init == InitMethod::Hosvd) {
        factors = hosvd(x, ranks).factors;
    } else {
        auto rng = make_rng(opts.seed, restart);
        for (std::size_t n = 0; n < 3; ++n)
            factors[n] = orthonormal_random(static_cast<Eigen::Index>(x.dim(n)),
                                            static_cast<Eigen::Index>(ranks[n]), rng);
    }

    TuckerRun run;
    // The starting point is a candidate too, so the result never scores worse
    // than its initialization, even by round-off.
    auto [start_core, start_err] = tucker_core_and_error(x, factors, norm_x);
    run.model = TuckerModel{std::move(start_core), factors};
    run.report.relative_error = start_err;
    double previous = std::numeric_limits<double>::infinity();
    for (int iter = 1; iter <= opts.max_iters; ++iter) {
        for (std::size_t n = 0; n < 3; ++n) {
            DenseTensor projected = x;
            for (std::size_t m = 0; m < 3; ++m)
                if (m != n) projected = mode_n_product(projected, factors[m].transpose(), m);
            factors[n] = leading_left_singular_vectors(unfold(projected, n),
                                                       static_cast<Eigen::Index>(ranks[n]));
        }
        auto [core, err] = tucker_core_and_error(x, factors, norm_x);
        if (err <= run.report.relative_error) {
            run.model = TuckerModel{std::move(core), factors};
            run.report.relative_error = err;
        }
        run.report.error_history.push_back(err);
        run.report.iterations_run = iter;
        if ((iter > 1 && stop_iterating(previous, err, opts.tol)) || err <= kErrorFloor) {
            run.report.converged = true;
            break;
        }
        previous = err;
    }
    return run;
}

}  // namespace

InitMethod parse_init_method(std::string_view text) {
    if (text == "random") return InitMethod::Random;
    if (text == "hosvd" || text == "hosvd-based") return InitMethod::Hosvd;
    throw std::invalid_argument("unknown init method '" + std::string(text) + "'");
}

std::string_view to_string(InitMethod init) {
    return init == InitMethod::Random ? "random" : "hosvd";
}

void FitOptions::validate() const {
    if (!(tol > 0)) throw std::invalid_argument("fit tol must be positive");
    if (max_iters < 1) throw std::invalid_argument("fit max_iters must be at least 1");
    if (restarts < 0) throw std::invalid_argument("fit restarts must be non-negative");
}

Shape CPModel::shape() const {
    return {static_cast<std::size_t>(factors[0].rows()), static_cast<std::size_t>(factors[1].rows()),
            static_cast<std::size_t>(factors[2].rows())};
}

Shape TuckerModel::shape() const {
    return {static_cast<std::size_t>(factors[0].rows()), static_cast<std::size_t>(factors[1].rows()),
            static_cast<std::size_t>(factors[2].rows())};
}

std::size_t max_cp_rank(const Shape& shape) {
    if (shape.size() != 3) throw std::invalid_argument("max_cp_rank expects a 3-mode shape");
    return std::min({shape[0] * shape[1], shape[1] * shape[2], shape[0] * shape[2]});
}

CPFit cp_als(const DenseTensor& t, std::size_t rank, const FitOptions& opts) {
    opts.validate();
    const DenseTensor x = t.as_order3();
    const std::size_t limit = max_cp_rank(x.shape());
    if (rank < 1 || rank > limit)
        throw std::invalid_argument("CP rank " + std::to_string(rank) + " must lie in [1, " +
                                    std::to_string(limit) + "]");
    const auto r = static_cast<Eigen::Index>(rank);

    const double norm_x = frobenius_norm(x);
    if (norm_x == 0) {
        CPModel model;
        model.weights = Vector::Zero(r);
        for (std::size_t n = 0; n < 3; ++n) {
            model.factors[n] = Matrix::Zero(static_cast<Eigen::Index>(x.dim(n)), r);
            model.factors[n].row(0).setOnes();
        }
        FitReport report;
        report.converged = true;
        return {std::move(model), std::move(report)};
    }

    const std::array<Matrix, 3> unfoldings{unfold(x, 0), unfold(x, 1), unfold(x, 2)};
    CPRun best;
    int best_index = -1;
    for (int restart = 0; restart <= opts.restarts; ++restart) {
        const InitMethod init = restart == 0 ? opts.init : InitMethod::Random;
        CPRun run = cp_single_run(unfoldings, norm_x, r, init, opts, restart);
        if (best_index < 0 || improves_on(run.report.relative_error, best.report.relative_error)) {
            best = std::move(run);
            best_index = restart;
        }
    }
    best.report.restart_chosen = best_index;
    return {canonical_cp_model(std::move(best.factors), std::move(best.weights)),
            std::move(best.report)};
}

DenseTensor cp_reconstruct(const CPModel& m) {
    const auto& [a, b, c] = m.factors;
    if (a.cols() != m.weights.size() || b.cols() != m.weights.size() ||
        c.cols() != m.weights.size())
        throw std::invalid_argument("CP model factor column counts must equal its rank");
    const Matrix x0 = a * m.weights.asDiagonal() * khatri_rao(c, b).transpose();
    return fold(x0, 0, m.shape());
}

TuckerModel hosvd(const DenseTensor& t, const TuckerRanks& ranks) {
    const DenseTensor x = t.as_order3();
    check_tucker_ranks(x.shape(), ranks);
    std::array<Matrix, 3> factors;
    for (std::size_t n = 0; n < 3; ++n)
        factors[n] =
            leading_left_singular_vectors(unfold(x, n), static_cast<Eigen::Index>(ranks[n]));
    DenseTensor core = x;
    for (std::size_t n = 0; n < 3; ++n) core = mode_n_product(core, factors[n].transpose(), n);
    return TuckerModel{std::move(core), std::move(factors)};
}

TuckerFit tucker_hooi(const DenseTensor& t, const TuckerRanks& ranks, const FitOptions& opts) {
    opts.validate();
    const DenseTensor x = t.as_order3();
    check_tucker_ranks(x.shape(), ranks);
    const double norm_x = frobenius_norm(x);

    TuckerRun best;
    int best_index = -1;
    for (int restart = 0; restart <= opts.restarts; ++restart) {
        const InitMethod init = restart == 0 ? opts.init : InitMethod::Random;
        TuckerRun run = hooi_single_run(x, norm_x, ranks, init, opts, restart);
        if (best_index < 0 || improves_on(run.report.relative_error, best.report.relative_error)) {
            best = std::move(run);
            best_index = restart;
        }
    }
    best.report.restart_chosen = best_index;
    return {std::move(best.model), std::move(best.report)};
}

DenseTensor tucker_reconstruct(const TuckerModel& m) {
    const DenseTensor core = m.core.as_order3();
    for (std::size_t n = 0; n < 3; ++n)
        if (static_cast<std::size_t>(m.factors[n].cols()) != core.dim(n))
            throw std::invalid_argument("Tucker factor " + std::to_string(n) +
                                        " column count does not match the core");
    DenseTensor out = core;
    for (std::size_t n = 0; n < 3; ++n) out = mode_n_product(out, m.factors[n], n);
    return out;
}

TuckerRanks expand_tucker_rank(std::size_t rank, const Shape& shape) {
    if (shape.size() != 3) throw std::invalid_argument("expand_tucker_rank expects a 3-mode shape");
    return {rank, rank, std::min(rank, shape[2])};
}

Matrix truncated_svd_matrix(const Matrix& m, std::size_t rank) {
    const auto limit = static_cast<std::size_t>(std::min(m.rows(), m.cols()));
    if (rank < 1 || rank > limit)
        throw std::invalid_argument("SVD rank " + std::to_string(rank) + " must lie in [1, " +
                                    std::to_string(limit) + "]");
    const auto r = static_cast<Eigen::Index>(rank);
    Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    return svd.matrixU().leftCols(r) * svd.singularValues().head(r).asDiagonal() *
           svd.matrixV().leftCols(r).transpose();
}

double relative_error(const DenseTensor& original, const DenseTensor& approx) {
    if (original.shape() != approx.shape())
        throw std::invalid_argument("relative_error: tensor shapes differ");
    const double denom = frobenius_norm(original);
    if (denom == 0) throw std::invalid_argument("relative_error: original tensor has zero norm");
    const auto a = original.data();
    const auto b = approx.data();
    const auto n = static_cast<Eigen::Index>(a.size());
    return (Eigen::Map<const Vector>(a.data(), n) - Eigen::Map<const Vector>(b.data(), n)).norm() /
           denom;
}

}  // namespace trawl
