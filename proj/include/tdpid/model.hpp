#pragma once

// Plant, controller and closed-loop data types.
//
// Plant:       x'(t) = A0 x(t) + sum_k A_k x(t - tau_k) + B u(t - tau0),  y = C x
// Controller:  u = Kp y + Ki w + Kd z,   w' = y,   T z' + z = y'
//
// The closed loop on xi = [x; w; z] is the retarded system
//   E xi'(t) = M0 xi(t) + M1 xi(t - tau0) + sum_k diag(A_k, 0, 0) xi(t - tau_k)
// whose characteristic matrix is M(s) = sE - M0 - sum_j D_j exp(-tau_j s).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tdpid {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

/// Thrown when a system, controller or option violates a documented invariant.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown when a numerical routine cannot produce a trustworthy answer.
class ComputationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct StateDelay {
    double tau = 0.0;
    Matrix A;
};

/// LTI plant with discrete state delays and an input delay.
struct DelaySystem {
    Matrix A0;
    std::vector<StateDelay> state_terms;  // strictly increasing tau > 0
    Matrix B;
    Matrix C;
    double tau0 = 0.0;

    int n() const { return static_cast<int>(A0.rows()); }
    int m() const { return static_cast<int>(B.cols()); }
    int p() const { return static_cast<int>(C.rows()); }
};

/// PID law with first-order low-pass filter on the derivative action.
/// Gains follow the convention u = Kp y + Ki int(y) + Kd z.
struct PIDFilterController {
    Matrix Kp;
    Matrix Ki;
    Matrix Kd;
    double T = 1.0;

    double cutoff_frequency() const { return 1.0 / T; }
    bool has_integral_action() const { return Ki.size() > 0 && !Ki.isZero(0.0); }

    /// Builds a controller from gains quoted for the law u = -(Kp y + Ki int(y) + Kd z).
    static PIDFilterController negative_feedback(Matrix kp, Matrix ki, Matrix kd, double T) {
        return {-std::move(kp), -std::move(ki), -std::move(kd), T};
    }

    /// SISO convenience constructor.
    static PIDFilterController siso(double kp, double ki, double kd, double T) {
        return {Matrix::Constant(1, 1, kp), Matrix::Constant(1, 1, ki), Matrix::Constant(1, 1, kd), T};
    }
};

struct ValidationIssue {
    std::string code;     // stable identifier, e.g. "negative delay"
    std::string message;  // human-readable detail
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;

    bool ok() const { return issues.empty(); }
    bool has(const std::string& code) const {
        return std::any_of(issues.begin(), issues.end(), [&](const ValidationIssue& i) { return i.code == code; });
    }
    std::string summary() const {
        std::string out;
        for (const auto& i : issues) {
            if (!out.empty()) out += "; ";
            out += i.code + ": " + i.message;
        }
        return out;
    }
};

namespace detail {

inline bool all_finite(const Matrix& M) { return M.size() == 0 || M.allFinite(); }

inline std::string dims(const Matrix& M) {
    return std::to_string(M.rows()) + "x" + std::to_string(M.cols());
}

}  // namespace detail

inline ValidationReport validate_system(const DelaySystem& sys) {
    ValidationReport r;
    auto add = [&](std::string code, std::string msg) { r.issues.push_back({std::move(code), std::move(msg)}); };

    const auto n = sys.A0.rows();
    if (n == 0) add("empty system", "A0 has no rows");
    if (sys.A0.cols() != n) add("dimension mismatch A0", "A0 must be square, got " + detail::dims(sys.A0));
    if (sys.B.rows() != n) add("dimension mismatch B", "B must have " + std::to_string(n) + " rows, got " + detail::dims(sys.B));
    if (sys.B.cols() == 0) add("dimension mismatch B", "B has no columns");
    if (sys.C.cols() != n) add("dimension mismatch C", "C must have " + std::to_string(n) + " columns, got " + detail::dims(sys.C));
    if (sys.C.rows() == 0) add("dimension mismatch C", "C has no rows");
    if (!detail::all_finite(sys.A0) || !detail::all_finite(sys.B) || !detail::all_finite(sys.C))
        add("non-finite entry", "plant matrices must be finite");

    if (!std::isfinite(sys.tau0)) add("non-finite entry", "tau0 must be finite");
    else if (sys.tau0 < 0.0) add("negative delay", "tau0 = " + std::to_string(sys.tau0));

    double prev = 0.0;
    for (std::size_t k = 0; k < sys.state_terms.size(); ++k) {
        const auto& term = sys.state_terms[k];
        const auto label = "state delay #" + std::to_string(k + 1);
        if (!std::isfinite(term.tau)) add("non-finite entry", label + " is not finite");
        else if (term.tau < 0.0) add("negative delay", label + " tau = " + std::to_string(term.tau));
        else if (term.tau == 0.0) add("zero state delay", label + " must be strictly positive");
        else if (k > 0 && term.tau <= prev) add("unsorted delays", label + " must exceed the previous delay");
        prev = term.tau;
        if (term.A.rows() != n || term.A.cols() != n)
            add("dimension mismatch A_k", label + " matrix is " + detail::dims(term.A));
        if (!detail::all_finite(term.A)) add("non-finite entry", label + " matrix has non-finite entries");
    }
    return r;
}

inline ValidationReport validate_controller(const DelaySystem& sys, const PIDFilterController& ctl) {
    ValidationReport r;
    auto check = [&](const Matrix& K, const char* name) {
        if (K.rows() != sys.m() || K.cols() != sys.p())
            r.issues.push_back({std::string("dimension mismatch ") + name,
                                std::string(name) + " must be " + std::to_string(sys.m()) + "x" + std::to_string(sys.p()) +
                                    ", got " + detail::dims(K)});
        else if (!detail::all_finite(K))
            r.issues.push_back({"non-finite entry", std::string(name) + " has non-finite entries"});
    };
    check(ctl.Kp, "Kp");
    check(ctl.Ki, "Ki");
    check(ctl.Kd, "Kd");
    if (!(ctl.T > 0.0) || !std::isfinite(ctl.T))
        r.issues.push_back({"nonpositive filter constant", "T must be finite and > 0, got " + std::to_string(ctl.T)});
    return r;
}

/// What to do with the integrator states w when Ki is exactly zero.
enum class IntegratorStates {
    keep,            // always allocate w (n_ext = n + 2p)
    drop_if_unused,  // omit w when Ki == 0 (n_ext = n + p)
};

struct DelayedBlock {
    double tau = 0.0;
    Matrix D;
};

/// Assembled closed loop. Immutable once built.
class ClosedLoopSystem {
public:
    /// Builds a loop from raw blocks; no plant/controller provenance, so no parameter sensitivities.
    static ClosedLoopSystem from_blocks(Matrix E, Matrix M0, std::vector<DelayedBlock> blocks) {
        const auto n = E.rows();
        if (E.cols() != n || M0.rows() != n || M0.cols() != n)
            throw ValidationError("from_blocks: E and M0 must be square of equal size");
        ClosedLoopSystem cl;
        cl.E_ = std::move(E);
        cl.M0_ = std::move(M0);
        for (auto& b : blocks) {
            if (b.D.rows() != n || b.D.cols() != n) throw ValidationError("from_blocks: delayed block has wrong size");
            if (!(b.tau >= 0.0) || !std::isfinite(b.tau)) throw ValidationError("from_blocks: negative delay");
            if (b.tau == 0.0) cl.M0_ += b.D;
            else cl.add_block(b.tau, b.D);
        }
        cl.check_E();
        return cl;
    }

    int n_ext() const { return static_cast<int>(E_.rows()); }
    const Matrix& E() const { return E_; }
    const Matrix& M0() const { return M0_; }
    /// Input-delay feedback block; folded into M0 (and zero here) when tau0 = 0.
    const Matrix& M1() const { return M1_; }
    const std::vector<DelayedBlock>& delayed_blocks() const { return blocks_; }

    double max_delay() const { return blocks_.empty() ? 0.0 : blocks_.back().tau; }
    double min_delay() const { return blocks_.empty() ? 0.0 : blocks_.front().tau; }

    bool has_source() const { return source_.has_value(); }
    const DelaySystem& system() const { return source_->system; }
    const PIDFilterController& controller() const { return source_->controller; }
    bool has_integrator_states() const { return source_ && source_->integrator; }

    /// Offsets of the x, w, z blocks inside the extended state (w offset is -1 when dropped).
    int x_offset() const { return 0; }
    int w_offset() const { return has_integrator_states() ? system().n() : -1; }
    int z_offset() const { return has_integrator_states() ? system().n() + system().p() : system().n(); }

    /// Characteristic matrix M(s).
    CMatrix char_matrix(Complex s) const;
    /// dM/ds = E + sum_j tau_j D_j exp(-tau_j s).
    CMatrix char_matrix_ds(Complex s) const;

    friend ClosedLoopSystem assemble_closed_loop(const DelaySystem&, const PIDFilterController&, IntegratorStates);

private:
    struct Source {
        DelaySystem system;
        PIDFilterController controller;
        bool integrator = true;
    };

    void add_block(double tau, const Matrix& D) {
        auto it = std::lower_bound(blocks_.begin(), blocks_.end(), tau,
                                   [](const DelayedBlock& b, double t) { return b.tau < t; });
        if (it != blocks_.end() && it->tau == tau) it->D += D;
        else blocks_.insert(it, DelayedBlock{tau, D});
    }

    void check_E() const {
        Eigen::FullPivLU<Matrix> lu(E_);
        if (!lu.isInvertible()) throw ValidationError("closed loop has a singular E matrix");
    }

    Matrix E_, M0_, M1_;
    std::vector<DelayedBlock> blocks_;
    std::optional<Source> source_;
};

/// exp(-tau s), flushed to zero when the result would underflow.
inline Complex delay_factor(double tau, Complex s) {
    const double e = -tau * s.real();
    if (e < -700.0) return {0.0, 0.0};
    return std::exp(-tau * s);
}

inline CMatrix ClosedLoopSystem::char_matrix(Complex s) const {
    CMatrix M = s * E_.cast<Complex>() - M0_.cast<Complex>();
    for (const auto& b : blocks_) M -= delay_factor(b.tau, s) * b.D.cast<Complex>();
    return M;
}

inline CMatrix ClosedLoopSystem::char_matrix_ds(Complex s) const {
    CMatrix M = E_.cast<Complex>();
    for (const auto& b : blocks_) M += (b.tau * delay_factor(b.tau, s)) * b.D.cast<Complex>();
    return M;
}

/// Assembles E, M0, M1 and the state-delay blocks of the filtered PID loop.
/// Throws ValidationError on dimension mismatch or T <= 0.
inline ClosedLoopSystem assemble_closed_loop(const DelaySystem& sys, const PIDFilterController& ctl,
                                             IntegratorStates integrator = IntegratorStates::keep) {
    if (auto r = validate_system(sys); !r.ok()) throw ValidationError("invalid system: " + r.summary());
    if (auto r = validate_controller(sys, ctl); !r.ok()) throw ValidationError("invalid controller: " + r.summary());

    const int n = sys.n(), p = sys.p();
    const bool with_w = integrator == IntegratorStates::keep || ctl.has_integral_action();
    const int pw = with_w ? p : 0;
    const int N = n + pw + p;
    const int zo = n + pw;
    const double inv_T = 1.0 / ctl.T;

    ClosedLoopSystem cl;
    cl.E_ = Matrix::Identity(N, N);
    cl.E_.block(zo, 0, p, n) = -inv_T * sys.C;

    cl.M0_ = Matrix::Zero(N, N);
    cl.M0_.topLeftCorner(n, n) = sys.A0;
    if (with_w) cl.M0_.block(n, 0, p, n) = sys.C;
    cl.M0_.block(zo, zo, p, p) = -inv_T * Matrix::Identity(p, p);

    Matrix M1 = Matrix::Zero(N, N);
    M1.topLeftCorner(n, n) = sys.B * ctl.Kp * sys.C;
    if (with_w) M1.block(0, n, n, p) = sys.B * ctl.Ki;
    M1.block(0, zo, n, p) = sys.B * ctl.Kd;

    if (sys.tau0 == 0.0) {
        cl.M0_ += M1;
        cl.M1_ = Matrix::Zero(N, N);
    } else {
        cl.M1_ = M1;
        cl.add_block(sys.tau0, M1);
    }
    for (const auto& term : sys.state_terms) {
        Matrix D = Matrix::Zero(N, N);
        D.topLeftCorner(n, n) = term.A;
        cl.add_block(term.tau, D);
    }
    cl.source_ = ClosedLoopSystem::Source{sys, ctl, with_w};
    return cl;
}

/// Returns a copy of the plant with a different input delay.
/// Loop with an ideal derivative, u = Kp y + Ki w + Kd y', w' = y, as the neutral pencil
/// (I - B Kd C) x' = (A0 + B Kp C) x + B Ki w plus the state-delay terms. Needs tau0 = 0;
/// w is present only when Ki is nonzero.
inline ClosedLoopSystem ideal_pid_loop(const DelaySystem& sys, const PIDFilterController& ctl) {
    if (auto r = validate_system(sys); !r.ok()) throw ValidationError("invalid system: " + r.summary());
    if (sys.tau0 != 0.0) throw ValidationError("ideal PID loop needs tau0 = 0");
    const auto n = sys.n(), p = sys.p();
    if (ctl.Kp.rows() != sys.m() || ctl.Kp.cols() != p || ctl.Kd.rows() != sys.m() || ctl.Kd.cols() != p ||
        (ctl.Ki.size() > 0 && (ctl.Ki.rows() != sys.m() || ctl.Ki.cols() != p)))
        throw ValidationError("invalid controller: gain dimensions do not match the plant");
    const bool with_w = ctl.has_integral_action();
    const auto N = n + (with_w ? p : 0);
    Matrix E = Matrix::Identity(N, N), M0 = Matrix::Zero(N, N);
    E.topLeftCorner(n, n) -= sys.B * ctl.Kd * sys.C;
    M0.topLeftCorner(n, n) = sys.A0 + sys.B * ctl.Kp * sys.C;
    if (with_w) {
        M0.block(0, n, n, p) = sys.B * ctl.Ki;
        M0.block(n, 0, p, n) = sys.C;
    }
    std::vector<DelayedBlock> blocks;
    for (const auto& t : sys.state_terms) {
        Matrix D = Matrix::Zero(N, N);
        D.topLeftCorner(n, n) = t.A;
        blocks.push_back({t.tau, D});
    }
    return ClosedLoopSystem::from_blocks(std::move(E), std::move(M0), std::move(blocks));
}

inline DelaySystem with_input_delay(DelaySystem sys, double tau0) {
    sys.tau0 = tau0;
    return sys;
}

inline PIDFilterController with_filter_constant(PIDFilterController ctl, double T) {
    ctl.T = T;
    return ctl;
}

}  // namespace tdpid
