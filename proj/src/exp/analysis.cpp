#include <set>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "diffood/exp.hpp"

namespace diffood::exp {

Projection project_2d(const Eigen::MatrixXd& reprs) {
    if (reprs.rows() < 3) throw std::invalid_argument("project_2d: need at least 3 samples");
    if (reprs.cols() < 1) throw std::invalid_argument("project_2d: empty representations");
    const Eigen::RowVectorXd mean = reprs.colwise().mean();
    const Eigen::MatrixXd centered = reprs.rowwise() - mean;
    const Eigen::MatrixXd cov = centered.transpose() * centered / double(reprs.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw std::runtime_error("project_2d: eigendecomposition failed");

    const Eigen::Index dim = cov.rows();
    Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(dim, 2);
    Projection p;
    p.variance.setZero();
    const double top = std::max(eig.eigenvalues()(dim - 1), 0.0);
    for (int k = 0; k < 2 && k < dim; ++k) {
        const double lambda = std::max(eig.eigenvalues()(dim - 1 - k), 0.0);
        if (k == 1 && !(lambda > 1e-12 * std::max(top, 1e-300))) break;
        Eigen::VectorXd v = eig.eigenvectors().col(dim - 1 - k);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        basis.col(k) = v;
        p.variance(k) = lambda;
    }
    p.degenerate = basis.col(1).isZero();
    if (p.degenerate) p.variance(1) = 0.0;
    p.points = centered * basis;
    return p;
}

double distinct_n(std::span<const std::string> samples, std::size_t n) {
    if (n < 1 || n > 3) throw std::invalid_argument("distinct_n: n must be 1, 2 or 3");
    if (samples.empty()) throw std::invalid_argument("distinct_n: no samples");
    std::set<std::vector<std::string>> grams;
    std::size_t total = 0;
    for (const auto& s : samples) {
        std::istringstream in(s);
        std::vector<std::string> toks;
        for (std::string t; in >> t;) toks.push_back(t);
        for (std::size_t i = 0; i + n <= toks.size(); ++i) {
            grams.emplace(toks.begin() + std::ptrdiff_t(i), toks.begin() + std::ptrdiff_t(i + n));
            ++total;
        }
    }
    if (total == 0) throw std::invalid_argument("distinct_n: every sample is shorter than n");
    return double(grams.size()) / double(total);
}

}  // namespace diffood::exp
