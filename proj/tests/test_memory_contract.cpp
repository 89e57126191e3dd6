// Working-memory ceiling for the blocked score kernels: evaluating the
// estimating equations at n=5000, p=100, d=5, K=5 must stay within an
// O(np + p^2 K) budget and never approach the (np)^2 footprint a dense
// working covariance would need. The check reads the process high-water
// resident set (VmHWM), which catches every allocator the linear algebra
// uses. Runs as its own binary so nothing else can inflate the mark.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "jmcr/estimating_equations.hpp"
#include "jmcr/similarity.hpp"
#include "jmcr/stats.hpp"

namespace {

long read_status_kb(const std::string& key) {
    std::ifstream in("/proc/self/status");
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind(key, 0) == 0) {
            std::istringstream ss(line.substr(key.size() + 1));
            long kb = 0;
            ss >> kb;
            return kb;
        }
    }
    return -1;
}

int fail(const std::string& msg) {
    std::cerr << "[FAIL] " << msg << "\n";
    return 1;
}

} // namespace

int main() {
    using namespace jmcr;
    const int n = 5000, p = 100, d = 5, K = 5;

    ModelSpec spec;
    spec.link = Link::Log;
    spec.variance = VarianceFamily::Proportional;
    spec.n = n;
    spec.p = p;
    spec.d = d;
    spec.K = K;

    Rng rng(1);
    Dataset ds;
    ds.X = MatrixXd::Ones(n, d);
    for (int i = 0; i < n; ++i)
        for (int l = 1; l < d; ++l) ds.X(i, l) = rng.normal();
    for (int k = 0; k < K; ++k) {
        std::vector<double> trait(p);
        for (int j = 0; j < p; ++j) trait[static_cast<std::size_t>(j)] = rng.normal();
        ds.basis.push_back(build_quantitative(trait));
    }
    ParameterState st = ParameterState::zero(p, d, K);
    for (int j = 0; j < p; ++j) st.beta(j, 0) = rng.uniform(0.2, 0.6);
    st.alpha(0) = 1.0;
    ds.Y.resize(n, p);
    const MatrixXd mu = mean_matrix(spec, st.beta, ds.X);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < p; ++j)
            ds.Y(i, j) = std::max(0.0, mu(i, j) + std::sqrt(mu(i, j)) * rng.normal());

    const long before_kb = read_status_kb("VmHWM");
    if (before_kb < 0) return fail("cannot read VmHWM from /proc/self/status");

    const TraceGram tg = trace_gram(ds);
    const ModelEval ev = evaluate_model(spec, ds, st);
    const WorkingCov wc = working_cov(ds.basis, st.alpha, p);
    const VectorXd pb = psi_beta_eval(ds, ev, wc);
    const VectorXd pa = psi_alpha_eval(ds, ev, tg, st.alpha);
    const MatrixXd J = fisher_info_eval(ds, ev, wc);
    const double q = q_loss_eval(ds, ev, wc.sigma);

    const long after_kb = read_status_kb("VmHWM");
    const double used_mb = (after_kb - before_kb) / 1024.0;

    // Inputs already hold ~8 n*p arrays (~32 MB); the evaluation itself may
    // add the cached weight fields plus the stacked n x pd Jacobian factor.
    // 512 MB is orders of magnitude below the ~2 TB an (np)^2 matrix needs
    // while leaving slack for allocator overhead.
    const double cap_mb = 512.0;
    std::cout << "psi_beta[0]=" << pb(0) << " psi_alpha[0]=" << pa(0) << " J(0,0)=" << J(0, 0)
              << " Q=" << q << "\n";
    std::cout << "memory high-water delta: " << used_mb << " MB (cap " << cap_mb << " MB)\n";
    if (!(pb.allFinite() && pa.allFinite() && J.allFinite()) || !std::isfinite(q))
        return fail("non-finite kernel output");
    if (used_mb > cap_mb) return fail("working memory exceeded the O(np + p^2 K) budget");
    std::cout << "[PASS] memory contract\n";
    return 0;
}
