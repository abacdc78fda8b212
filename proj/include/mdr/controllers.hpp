#pragma once

#include "mdr/ambiguity.hpp"
#include "mdr/plant.hpp"
#include "mdr/qpcore.hpp"
#include "mdr/trajkit.hpp"

#include <cstdint>
#include <deque>
#include <memory>
#include <string>
#include <vector>

namespace mdr {

enum class TerminalMode { None, BoxAroundReference };

/// How each scenario's expected cost is formed.
///   SampledPath: the single (w, v) path stored in the scenario.
///   Moments:     mean path of the scenario's noise distribution plus the exact covariance term.
enum class ExpectationMode { SampledPath, Moments };

struct ControllerConfig {
    Eigen::Index T_ini = 4;
    Eigen::Index N = 20;
    Matrix Q;          ///< p x p, positive definite
    Matrix R;          ///< m x m, positive definite
    double lambda_g = 1e-4;
    double lambda_y = 1e3;
    std::vector<Interval> u_bounds; ///< one per input; empty means unbounded
    std::vector<Interval> y_bounds; ///< one per output; empty means unbounded
    TerminalMode terminal_mode = TerminalMode::None;
    double terminal_radius = 0.0;
    int M = 5;
    ExpectationMode expectation = ExpectationMode::SampledPath;
    bool integral_action = false;
    double k_I = 0.1;
    SolveOptions solver;

    /// Checks the invariants for a plant with m inputs and p outputs.
    void validate(Eigen::Index m, Eigen::Index p) const;
};

/// Hankel row blocks at depth T_ini + N plus the input-consistent parametrisation
///   g = Pi_ini u_ini + Pi_f u + Null eta
/// of every g with Up g = u_ini and Uf g = u.
struct DataBlocks {
    Matrix Up, Uf, Yp, Yf;
    Eigen::Index g_dim = 0;
    Eigen::Index T_ini = 0, N = 0;
    Matrix Pi_ini, Pi_f, Null;

    Eigen::Index null_dim() const { return Null.cols(); }
};

/// Throws DepthExceedsData when the data are too short and ExcitationFailed when [Up; Uf] is rank deficient.
DataBlocks build_data_blocks(const Signal& u_d, const Signal& y_d, Eigen::Index T_ini, Eigen::Index N);

/// The most recent T_ini inputs and outputs.
class IoBuffers {
public:
    IoBuffers(Eigen::Index T_ini, Eigen::Index m, Eigen::Index p);

    void push(const Vector& u, const Vector& y);
    bool warm() const { return static_cast<Eigen::Index>(u_.size()) == T_ini_; }

    Eigen::Index T_ini() const { return T_ini_; }
    /// Stacked (oldest first); throw BuffersNotWarm until T_ini samples are present.
    Vector u_ini() const;
    Vector y_ini() const;
    /// Stacked outputs restricted to channels [first, first + count).
    Vector y_ini(Eigen::Index first, Eigen::Index count) const;

    const std::deque<Vector>& inputs() const { return u_; }
    const std::deque<Vector>& outputs() const { return y_; }

private:
    Eigen::Index T_ini_, m_, p_;
    std::deque<Vector> u_, y_;
};

/// Known-block model with the output coupling, as a function of the uncertain parameters.
struct MdrModel {
    HybridPartition nominal;
    Matrix A_y;
    ThetaBox theta_box;
    MsdParams nominal_params;
    double Ts = 0.1;

    struct Blocks {
        Matrix A_k, A_y, B_k, C_k, C_uk, D_k, D_u;
    };

    static MdrModel msd(const MsdParams& nominal, const ThetaBox& box, double Ts);
    /// Blocks rebuilt from the MSD partition at theta.
    Blocks remap(const MsdParams& theta) const;
};

/// Terminal requirement on the known outputs C_k x_{k+N}.
struct TerminalSet {
    bool active = false;
    Vector center;
    double radius = 0.0;

    /// Rows for `value = L z + c`. Radius 0 gives equalities (E z = f), otherwise G z <= h with
    /// two rows per channel.
    void append_to(ConvexProblem& p, const Matrix& L, const Vector& c) const;
};

TerminalSet terminal_set(const ControllerConfig& cfg, const Vector& r_terminal);

/// A built problem plus the maps needed to read predictions off its solution.
struct PredictiveProgram {
    ConvexProblem problem;
    Eigen::Index m = 0;              ///< the first m * N entries of z are u_k .. u_{k+N-1}
    std::vector<Matrix> y_map;       ///< per cost: stacked predicted outputs = y_map z + y_offset
    std::vector<Vector> y_offset;
};

/// Standard DeePC on full-output Hankels (`blocks` built from u_d and all outputs).
/// Decision z = (u, eta); single cost with lambda_g ||g||^2 and lambda_y ||sigma||^2.
PredictiveProgram build_deepc(const DataBlocks& blocks, const ControllerConfig& cfg, const IoBuffers& buf,
                              const Signal& r);

/// Scenario program: z = (u, eta_1, ..., eta_M). Scenario i rolls the known block forward with its own
/// parameters and noise, takes the unknown outputs from the data through g_i, and contributes one cost.
/// `blocks` are built from u_d and the unknown-output slice y_u_d.
PredictiveProgram build_mdr(const MdrModel& model, const DataBlocks& blocks, const ControllerConfig& cfg,
                            const Vector& x_known, const IoBuffers& buf, const std::vector<Scenario>& scenarios,
                            const Signal& r);

/// Condensed LQ tracking with the true model and full state; decision z = u.
PredictiveProgram build_mpc_oracle(const DiscreteLTI& truth, const ControllerConfig& cfg, const Vector& x,
                                   const Signal& r);

/// Model-based counterpart of the noiseless single-scenario MDR program: unknown outputs come from the
/// true model started at the full state, and the known block is rolled with the same output coupling.
/// `truth` must be in hybrid state order.
PredictiveProgram build_hybrid_oracle(const DiscreteLTI& truth, const HybridPartition& part,
                                      const ControllerConfig& cfg, const Vector& x, const Signal& r);

struct ControlStep {
    Vector u_applied;
    Signal predicted_y;
    double t_star = 0.0;
    std::vector<double> per_scenario_costs;
    SolveStatus solver_status = SolveStatus::Optimal;
    int iterations = 0;
    bool warmup = false;
    bool fallback = false;
};

/// What the plant exposes at step k.
struct StepInput {
    Vector y;       ///< measured outputs y_k
    Vector x_known; ///< known-block state x_k
    Vector x_full;  ///< full state in hybrid order (used by the oracle only)
    Signal r;       ///< references r_k .. r_{k+N}
    std::uint64_t seed = 0;
};

/// Receding-horizon driver shared by all controllers: warm-up with zero input for the first T_ini steps,
/// optional integral action, solve, fallback to the previous input when the solve is not optimal, then
/// shift the buffers with (u_applied, y_k).
class Controller {
public:
    Controller(ControllerConfig cfg, Eigen::Index m, Eigen::Index p);
    virtual ~Controller() = default;

    virtual std::string id() const = 0;

    ControlStep receding_step(const StepInput& in);

    const IoBuffers& buffers() const { return buf_; }
    const ControllerConfig& config() const { return cfg_; }
    int solver_failures() const { return failures_; }
    int solves() const { return solves_; }

protected:
    virtual PredictiveProgram build(const StepInput& in, const Signal& r_eff) = 0;
    /// Called after every step with the applied input; used for online ambiguity updates.
    virtual void observe(const StepInput& in, const Vector& u) { (void)in, (void)u; }

    ControllerConfig cfg_;
    Eigen::Index m_, p_;
    IoBuffers buf_;

private:
    Vector last_u_;
    Vector error_sum_;
    int failures_ = 0;
    int solves_ = 0;
};

class DeePCController : public Controller {
public:
    DeePCController(ControllerConfig cfg, DataBlocks blocks, Eigen::Index m, Eigen::Index p);
    std::string id() const override { return "deepc"; }

protected:
    PredictiveProgram build(const StepInput& in, const Signal& r_eff) override;

private:
    DataBlocks blocks_;
};

/// Options specific to the scenario controller.
struct MdrOptions {
    AmbiguitySpec w;
    AmbiguitySpec v;
    /// Online update of the residual distributions with a sliding window of this many atoms (0 = off).
    Eigen::Index adapt_window = 0;
};

class MdrController : public Controller {
public:
    MdrController(ControllerConfig cfg, MdrModel model, DataBlocks blocks, MdrOptions opts);
    std::string id() const override { return "mdr"; }

    const MdrOptions& options() const { return opts_; }

protected:
    PredictiveProgram build(const StepInput& in, const Signal& r_eff) override;
    void observe(const StepInput& in, const Vector& u) override;

private:
    MdrModel model_;
    DataBlocks blocks_;
    MdrOptions opts_;
    Vector prev_x_, prev_u_, prev_y_;
    bool have_prev_ = false;
};

enum class OracleKind { Exact, Hybrid };

class OracleController : public Controller {
public:
    /// `truth` in hybrid state order; `part` is its partition (used by the hybrid variant).
    OracleController(ControllerConfig cfg, DiscreteLTI truth, HybridPartition part, OracleKind kind);
    std::string id() const override { return "oracle"; }

protected:
    PredictiveProgram build(const StepInput& in, const Signal& r_eff) override;

private:
    DiscreteLTI truth_;
    HybridPartition part_;
    OracleKind kind_;
};

} // namespace mdr
