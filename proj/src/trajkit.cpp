#include "mdr/trajkit.hpp"

#include "mdr/errors.hpp"
#include "text_io.hpp"

#include <fstream>
#include <sstream>
#include <vector>

namespace mdr {

namespace detail {

bool parse_double(std::string_view text, double& out)
{
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t'))
        text.remove_prefix(1);
    while (!text.empty() && (text.back() == ' ' || text.back() == '\r' || text.back() == '\t'))
        text.remove_suffix(1);
    if (text.empty())
        return false;
    auto res = std::from_chars(text.data(), text.data() + text.size(), out);
    return res.ec == std::errc() && res.ptr == text.data() + text.size();
}

} // namespace detail

Signal::Signal(Matrix samples) : samples_(std::move(samples))
{
    if (samples_.rows() < 1)
        throw DimensionMismatch("Signal: at least one sample is required");
}

Signal::Signal(Eigen::Index length, Eigen::Index dim) : samples_(Matrix::Zero(length, dim)) {}

Signal Signal::from_stacked(const Vector& stacked, Eigen::Index dim)
{
    if (dim <= 0 || stacked.size() % dim != 0)
        throw DimensionMismatch("Signal::from_stacked: length is not a multiple of dim");
    const Eigen::Index len = stacked.size() / dim;
    Matrix m(len, dim);
    for (Eigen::Index k = 0; k < len; ++k)
        m.row(k) = stacked.segment(k * dim, dim).transpose();
    return Signal(std::move(m));
}

void Signal::set(Eigen::Index k, const Vector& value)
{
    if (value.size() != dim())
        throw DimensionMismatch("Signal::set: sample dimension mismatch");
    samples_.row(k) = value.transpose();
}

Vector Signal::stacked() const
{
    Vector v(samples_.size());
    for (Eigen::Index k = 0; k < length(); ++k)
        v.segment(k * dim(), dim()) = samples_.row(k).transpose();
    return v;
}

Signal Signal::window(Eigen::Index first, Eigen::Index count) const
{
    if (first < 0 || count < 0 || first + count > length())
        throw DimensionMismatch("Signal::window: range outside signal");
    Signal out;
    out.samples_ = samples_.middleRows(first, count);
    return out;
}

Signal Signal::shifted(Eigen::Index steps) const
{
    return window(steps, length() - steps);
}

Vector HankelMatrix::block(Eigen::Index block_row, Eigen::Index col) const
{
    return data.block(block_row * block_dim, col, block_dim, 1);
}

HankelMatrix build_hankel(const Signal& s, Eigen::Index depth)
{
    const Eigen::Index T = s.length();
    const Eigen::Index d = s.dim();
    if (depth < 1)
        throw DepthExceedsData("build_hankel: depth must be at least 1");
    if (depth > T)
        throw DepthExceedsData("build_hankel: depth " + std::to_string(depth) + " exceeds signal length " +
                               std::to_string(T));
    const Eigen::Index cols = T - depth + 1;
    HankelMatrix h;
    h.depth = depth;
    h.block_dim = d;
    h.data.resize(d * depth, cols);
    for (Eigen::Index i = 0; i < depth; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            h.data.block(i * d, j, d, 1) = s.samples().row(i + j).transpose();
    return h;
}

Eigen::Index numerical_rank(const Matrix& m, double rel_tol)
{
    if (m.size() == 0)
        return 0;
    Eigen::JacobiSVD<Matrix> svd(m);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv(0) == 0.0)
        return 0;
    const double cut = rel_tol * sv(0);
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > cut)
            ++rank;
    return rank;
}

bool persistently_exciting(const Signal& u, Eigen::Index order)
{
    const HankelMatrix h = build_hankel(u, order);
    return numerical_rank(h.data) == h.data.rows();
}

PastFuture split_past_future(const HankelMatrix& h, Eigen::Index t_ini, Eigen::Index horizon)
{
    if (t_ini < 0 || horizon < 0 || h.depth != t_ini + horizon)
        throw DepthMismatch("split_past_future: depth " + std::to_string(h.depth) + " != T_ini + N = " +
                            std::to_string(t_ini + horizon));
    const Eigen::Index past_rows = h.block_dim * t_ini;
    return {h.data.topRows(past_rows), h.data.bottomRows(h.data.rows() - past_rows)};
}

void write_signal_csv(std::ostream& os, const Signal& s)
{
    os << 't';
    for (Eigen::Index c = 0; c < s.dim(); ++c)
        os << ",ch" << c;
    os << '\n';
    for (Eigen::Index k = 0; k < s.length(); ++k) {
        os << k;
        for (Eigen::Index c = 0; c < s.dim(); ++c)
            os << ',' << detail::format_double(s.samples()(k, c));
        os << '\n';
    }
}

void write_signal_csv(const std::string& path, const Signal& s)
{
    std::ofstream os(path);
    if (!os)
        throw Error("cannot open " + path + " for writing");
    write_signal_csv(os, s);
}

Signal read_signal_csv(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line))
        throw Error("signal CSV: missing header");
    const auto header = detail::split(line, ',');
    if (header.empty() || header[0] != "t")
        throw Error("signal CSV: header must start with 't'");
    const auto dim = static_cast<Eigen::Index>(header.size() - 1);
    std::vector<double> values;
    Eigen::Index rows = 0;
    while (std::getline(is, line)) {
        if (line.empty() || line == "\r")
            continue;
        const auto fields = detail::split(line, ',');
        if (static_cast<Eigen::Index>(fields.size()) != dim + 1)
            throw DimensionMismatch("signal CSV: row " + std::to_string(rows) + " has wrong field count");
        for (Eigen::Index c = 0; c < dim; ++c) {
            double v = 0.0;
            if (!detail::parse_double(fields[static_cast<std::size_t>(c + 1)], v))
                throw Error("signal CSV: bad number in row " + std::to_string(rows));
            values.push_back(v);
        }
        ++rows;
    }
    Matrix m(rows, dim);
    for (Eigen::Index k = 0; k < rows; ++k)
        for (Eigen::Index c = 0; c < dim; ++c)
            m(k, c) = values[static_cast<std::size_t>(k * dim + c)];
    return Signal(std::move(m));
}

Signal read_signal_csv(const std::string& path)
{
    std::ifstream is(path);
    if (!is)
        throw Error("cannot open " + path);
    return read_signal_csv(is);
}

} // namespace mdr
