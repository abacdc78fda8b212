#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <string>

namespace mdr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// A sampled vector signal: row k holds the sample at time step k.
class Signal {
public:
    Signal() = default;
    explicit Signal(Matrix samples);
    Signal(Eigen::Index length, Eigen::Index dim);

    /// Builds a signal from the stacked vector (s_0; s_1; ...) with samples of size `dim`.
    static Signal from_stacked(const Vector& stacked, Eigen::Index dim);

    Eigen::Index length() const { return samples_.rows(); }
    Eigen::Index dim() const { return samples_.cols(); }

    Vector at(Eigen::Index k) const { return samples_.row(k).transpose(); }
    void set(Eigen::Index k, const Vector& value);

    const Matrix& samples() const { return samples_; }

    /// Samples stacked in time order into one column vector.
    Vector stacked() const;

    /// Samples [first, first + count).
    Signal window(Eigen::Index first, Eigen::Index count) const;

    /// Drops the first `steps` samples.
    Signal shifted(Eigen::Index steps) const;

private:
    Matrix samples_;
};

/// Block-Hankel arrangement of a signal. Block-row i, column j holds s_{i+j}.
struct HankelMatrix {
    Matrix data;
    Eigen::Index depth = 0;
    Eigen::Index block_dim = 0;

    Eigen::Index columns() const { return data.cols(); }
    /// The d-dimensional block at (block_row, col).
    Vector block(Eigen::Index block_row, Eigen::Index col) const;
};

HankelMatrix build_hankel(const Signal& s, Eigen::Index depth);

/// Numerical rank with singular-value cut-off `rel_tol * sigma_max`.
Eigen::Index numerical_rank(const Matrix& m, double rel_tol = 1e-9);

/// True iff the order-`order` Hankel matrix of `u` has full row rank.
bool persistently_exciting(const Signal& u, Eigen::Index order);

struct PastFuture {
    Matrix past;
    Matrix future;
};

PastFuture split_past_future(const HankelMatrix& h, Eigen::Index t_ini, Eigen::Index horizon);

// CSV: header `t,ch0,ch1,...`, one row per step.
void write_signal_csv(std::ostream& os, const Signal& s);
void write_signal_csv(const std::string& path, const Signal& s);
Signal read_signal_csv(std::istream& is);
Signal read_signal_csv(const std::string& path);

} // namespace mdr
