#pragma once

// Validation harness over simulated long-format tables: at-risk person-time
// designs for the marginal model, true-propensity stabilized weights,
// weighted pooled logistic regression (IRLS) with model-based and
// cluster-robust covariances, empirical hazard summaries, and z-score
// diagnostics of the empirical hazards against the model's targets.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <msmsim/dataset.hpp>
#include <msmsim/errors.hpp>
#include <msmsim/expr.hpp>
#include <msmsim/scenario.hpp>
#include <msmsim/special_functions.hpp>

namespace msmsim {

// ---------------------------------------------------------------------------
// Risk-set definitions
// ---------------------------------------------------------------------------

// Which person-visits count as at risk of the main event.  The long format
// already truncates follow-up at the main event and, for the cause-specific
// variant, at the competing event; the remaining distinction is how a
// competing event in the current interval is handled.
enum class hazard_kind { plain, subdistribution, cause_specific };

inline const char* to_string(hazard_kind k) {
    switch (k) {
        case hazard_kind::plain: return "plain";
        case hazard_kind::subdistribution: return "subdistribution";
        case hazard_kind::cause_specific: return "cause_specific";
    }
    return "?";
}

inline hazard_kind hazard_kind_for(const scenario& sc) {
    switch (sc.competing.variant) {
        case competing_variant::subdistribution: return hazard_kind::subdistribution;
        case competing_variant::cause_specific: return hazard_kind::cause_specific;
        default: return hazard_kind::plain;
    }
}

// A row stays in the subdistribution risk set through and beyond a competing
// event; the cause-specific hazard additionally conditions on being free of
// the competing event at the end of the interval.
inline bool row_in_risk_set(hazard_kind kind, int d) {
    return kind == hazard_kind::cause_specific ? d == 0 : true;
}

// ---------------------------------------------------------------------------
// Long-format table traversal
// ---------------------------------------------------------------------------

namespace detail {

// Walks a long-format person-time table individual by individual,
// materialising the evaluation context the scenario's expressions expect.
// Rows must be grouped by id with visits ascending from zero — the layout
// expand_person_time writes.
class table_walker {
public:
    table_walker(const scenario& sc, const person_time_table& t) : sc_(&sc), t_(&t) {
        id_c_ = t.column_index("id");
        visit_c_ = t.column_index("visit");
        a_c_ = t.column_index("a");
        y_c_ = t.column_index("y");
        d_c_ = t.has_column("d") ? static_cast<long long>(t.column_index("d")) : -1;
        for (const auto& v : sc.baseline)
            (v.shared ? x_c_ : b_c_).push_back(t.column_index(v.name));
        for (const auto& s : sc.series) {
            s_c_.push_back(t.column_index(s.name));
            defaults_.push_back(s.default_value);
        }
        x_.resize(x_c_.size());
        b_.resize(b_c_.size());
    }

    bool has_d() const { return d_c_ >= 0; }

    // Calls fn(row_index, id, visit, y, d, ctx) for every row in table
    // order.  The context is valid only for the duration of the call.
    template <typename Fn>
    void for_each_row(Fn&& fn) {
        const std::size_t n = t_->rows();
        std::size_t r = 0;
        while (r < n) {
            const double idv = t_->at(r, id_c_);
            std::size_t e = r;
            while (e < n && t_->at(e, id_c_) == idv) ++e;
            const std::size_t len = e - r;
            const long long id = static_cast<long long>(idv);
            if (len > static_cast<std::size_t>(sc_->visits))
                throw io_error("individual " + std::to_string(id) + " has " +
                               std::to_string(len) + " rows but the scenario has " +
                               std::to_string(sc_->visits) + " visits");
            for (std::size_t i = 0; i < x_c_.size(); ++i) x_[i] = t_->at(r, x_c_[i]);
            for (std::size_t i = 0; i < b_c_.size(); ++i) b_[i] = t_->at(r, b_c_[i]);
            series_.assign(s_c_.size() * len, 0.0);
            a_.assign(len, 0.0);
            for (std::size_t q = 0; q < len; ++q) {
                if (t_->at(r + q, visit_c_) != static_cast<double>(q))
                    throw io_error("rows for individual " + std::to_string(id) +
                                   " do not list consecutive visits from 0");
                for (std::size_t s = 0; s < s_c_.size(); ++s)
                    series_[s * len + q] = t_->at(r + q, s_c_[s]);
                a_[q] = t_->at(r + q, a_c_);
            }
            eval_context ctx;
            ctx.x = x_.data();
            ctx.b = b_.data();
            ctx.series_base = series_.data();
            ctx.series_stride = len;
            ctx.series_defaults = defaults_.data();
            ctx.a_path = a_.data();
            ctx.a_default = sc_->treatment_default;
            for (std::size_t q = 0; q < len; ++q) {
                ctx.visit = static_cast<int>(q);
                const int y = t_->at(r + q, y_c_) != 0.0 ? 1 : 0;
                const int d = d_c_ >= 0 &&
                                      t_->at(r + q, static_cast<std::size_t>(d_c_)) != 0.0
                                  ? 1
                                  : 0;
                fn(r + q, id, static_cast<int>(q), y, d,
                   static_cast<const eval_context&>(ctx));
            }
            r = e;
        }
    }

private:
    const scenario* sc_;
    const person_time_table* t_;
    std::size_t id_c_ = 0, visit_c_ = 0, a_c_ = 0, y_c_ = 0;
    long long d_c_ = -1;
    std::vector<std::size_t> x_c_, b_c_, s_c_;
    std::vector<double> defaults_;
    std::vector<double> x_, b_, series_, a_;
};

// Dense symmetric positive-definite Cholesky factorisation, row-major, lower
// triangle written in place.  Throws when a pivot collapses, naming the
// first offending column.
inline void cholesky_in_place(std::vector<double>& a, std::size_t p,
                              const std::vector<std::string>& names) {
    for (std::size_t j = 0; j < p; ++j) {
        const double orig = a[j * p + j];
        double diag = orig;
        for (std::size_t k = 0; k < j; ++k) diag -= a[j * p + k] * a[j * p + k];
        if (!(diag > 1e-12 * std::max(1.0, std::fabs(orig))))
            throw fit_error("design is rank deficient at column '" + names[j] + "'");
        const double l = std::sqrt(diag);
        a[j * p + j] = l;
        for (std::size_t i = j + 1; i < p; ++i) {
            double s = a[i * p + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * p + k] * a[j * p + k];
            a[i * p + j] = s / l;
        }
    }
}

// Solve L L' x = rhs in place given the factor from cholesky_in_place.
inline void cholesky_solve(const std::vector<double>& l, std::size_t p,
                           std::vector<double>& rhs) {
    for (std::size_t i = 0; i < p; ++i) {
        double s = rhs[i];
        for (std::size_t j = 0; j < i; ++j) s -= l[i * p + j] * rhs[j];
        rhs[i] = s / l[i * p + i];
    }
    for (std::size_t i = p; i-- > 0;) {
        double s = rhs[i];
        for (std::size_t j = i + 1; j < p; ++j) s -= l[j * p + i] * rhs[j];
        rhs[i] = s / l[i * p + i];
    }
}

inline std::vector<double> cholesky_inverse(const std::vector<double>& l, std::size_t p) {
    std::vector<double> inv(p * p, 0.0);
    std::vector<double> e(p);
    for (std::size_t c = 0; c < p; ++c) {
        std::fill(e.begin(), e.end(), 0.0);
        e[c] = 1.0;
        cholesky_solve(l, p, e);
        for (std::size_t r = 0; r < p; ++r) inv[r * p + c] = e[r];
    }
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < i; ++j) {
            const double m = 0.5 * (inv[i * p + j] + inv[j * p + i]);
            inv[i * p + j] = inv[j * p + i] = m;
        }
    return inv;
}

inline std::vector<double> matmul(const std::vector<double>& a,
                                  const std::vector<double>& b, std::size_t p) {
    std::vector<double> out(p * p, 0.0);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t k = 0; k < p; ++k) {
            const double v = a[i * p + k];
            if (v == 0.0) continue;
            for (std::size_t j = 0; j < p; ++j) out[i * p + j] += v * b[k * p + j];
        }
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Pooled logistic regression
// ---------------------------------------------------------------------------

// A pooled-logistic estimation problem: one row per at-risk person-visit.
struct design_matrix {
    std::vector<std::string> names;  // column names, length p
    std::vector<double> x;           // row-major values, rows() x p
    std::vector<double> y;           // outcomes, each exactly 0 or 1
    std::vector<double> w;           // per-row weights, > 0
    std::vector<long long> id;       // cluster identifier per row

    std::size_t cols() const { return names.size(); }
    std::size_t rows() const { return y.size(); }
};

struct fit_result {
    std::vector<std::string> names;
    std::vector<double> beta;
    std::vector<double> cov_model;     // p x p, row-major
    std::vector<double> cov_sandwich;  // p x p, row-major, clustered by id
    bool converged = false;
    int iterations = 0;
    double log_likelihood = 0.0;

    double se_model(std::size_t i) const {
        return std::sqrt(cov_model[i * beta.size() + i]);
    }
    double se_sandwich(std::size_t i) const {
        return std::sqrt(cov_sandwich[i * beta.size() + i]);
    }
    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return i;
        throw io_error("fit has no parameter named '" + name + "'");
    }
};

namespace detail {

inline double bernoulli_loglik(const design_matrix& d, const std::vector<double>& beta,
                               bool use_weights) {
    const std::size_t p = d.cols(), n = d.rows();
    double ll = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const double* xr = d.x.data() + r * p;
        double eta = 0.0;
        for (std::size_t c = 0; c < p; ++c) eta += xr[c] * beta[c];
        const double softplus =
            eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
        ll += (use_weights ? d.w[r] : 1.0) * (d.y[r] * eta - softplus);
    }
    return ll;
}

} // namespace detail

// Maximise the (weighted) Bernoulli log-likelihood by iteratively reweighted
// least squares.  Convergence: max absolute score < 1e-8, or relative
// log-likelihood change < 1e-10.  Model-based covariance is the inverse
// information at the optimum; the sandwich clusters score contributions by
// id (rows of one cluster need not be contiguous).
inline fit_result fit_pooled_logistic(const design_matrix& d, bool use_weights) {
    const std::size_t p = d.cols(), n = d.rows();
    if (p == 0 || n == 0) throw fit_error("pooled logistic fit needs rows and columns");
    if (d.x.size() != n * p || d.w.size() != n || d.id.size() != n)
        throw io_error("design arrays have inconsistent lengths");
    if (n < p) throw fit_error("pooled logistic fit has fewer rows than parameters");
    double events = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        if (d.y[r] != 0.0 && d.y[r] != 1.0)
            throw io_error("outcomes must be exactly 0 or 1");
        if (use_weights && !(d.w[r] > 0.0))
            throw fit_error("nonpositive weight at row " + std::to_string(r));
        events += d.y[r];
    }
    if (events == 0.0 || events == static_cast<double>(n))
        throw fit_error("outcome is constant; the likelihood has no maximum");

    std::vector<double> beta(p, 0.0), score(p), info(p * p), step(p), mu(n);
    double ll = detail::bernoulli_loglik(d, beta, use_weights);

    const auto accumulate = [&]() {
        std::fill(score.begin(), score.end(), 0.0);
        std::fill(info.begin(), info.end(), 0.0);
        for (std::size_t r = 0; r < n; ++r) {
            const double* xr = d.x.data() + r * p;
            double eta = 0.0;
            for (std::size_t c = 0; c < p; ++c) eta += xr[c] * beta[c];
            const double m = expit(eta);
            mu[r] = m;
            const double wr = use_weights ? d.w[r] : 1.0;
            const double res = wr * (d.y[r] - m);
            const double wgt = wr * m * (1.0 - m);
            for (std::size_t a = 0; a < p; ++a) {
                score[a] += res * xr[a];
                const double wx = wgt * xr[a];
                for (std::size_t b = 0; b <= a; ++b) info[a * p + b] += wx * xr[b];
            }
        }
        for (std::size_t a = 0; a < p; ++a)
            for (std::size_t b = a + 1; b < p; ++b) info[a * p + b] = info[b * p + a];
    };

    bool converged = false;
    int iterations = 0;
    for (int iter = 1; iter <= 50; ++iter) {
        accumulate();
        double smax = 0.0;
        for (double s : score) smax = std::max(smax, std::fabs(s));
        if (smax < 1e-8) {
            converged = true;
            break;
        }
        std::vector<double> l = info;
        detail::cholesky_in_place(l, p, d.names);
        step = score;
        detail::cholesky_solve(l, p, step);
        for (std::size_t c = 0; c < p; ++c) beta[c] += step[c];
        iterations = iter;
        std::size_t barg = 0;
        double bmax = 0.0;
        for (std::size_t c = 0; c < p; ++c)
            if (std::fabs(beta[c]) > bmax) {
                bmax = std::fabs(beta[c]);
                barg = c;
            }
        if (bmax > 100.0)
            throw fit_error("separation detected: coefficient '" + d.names[barg] +
                            "' is diverging (|" + d.names[barg] + "| > 100)");
        const double ll_new = detail::bernoulli_loglik(d, beta, use_weights);
        const bool small_change =
            std::fabs(ll_new - ll) < 1e-10 * (std::fabs(ll_new) + 1.0);
        ll = ll_new;
        if (small_change) {
            converged = true;
            break;
        }
    }
    // Final information and fitted values at the current estimate.
    accumulate();
    double max_dev = 0.0;
    for (std::size_t r = 0; r < n; ++r)
        max_dev = std::max(max_dev, std::fabs(d.y[r] - mu[r]));
    if (max_dev < 1e-6)
        throw fit_error(
            "separation detected: the fitted probabilities classify every row "
            "perfectly, so the likelihood has no finite maximum");
    if (!converged)
        throw fit_error("pooled logistic fit did not converge within 50 iterations");
    std::vector<double> l = info;
    detail::cholesky_in_place(l, p, d.names);
    fit_result out;
    out.names = d.names;
    out.beta = beta;
    out.converged = true;
    out.iterations = iterations;
    out.log_likelihood = detail::bernoulli_loglik(d, beta, use_weights);
    out.cov_model = detail::cholesky_inverse(l, p);

    std::unordered_map<long long, std::size_t> slot_of;
    slot_of.reserve(n / 4 + 1);
    std::vector<double> cluster_score;
    for (std::size_t r = 0; r < n; ++r) {
        auto [it, fresh] = slot_of.try_emplace(d.id[r], slot_of.size());
        if (fresh) cluster_score.resize(cluster_score.size() + p, 0.0);
        double* s = cluster_score.data() + it->second * p;
        const double* xr = d.x.data() + r * p;
        const double res = (use_weights ? d.w[r] : 1.0) * (d.y[r] - mu[r]);
        for (std::size_t c = 0; c < p; ++c) s[c] += res * xr[c];
    }
    std::vector<double> meat(p * p, 0.0);
    for (std::size_t g = 0; g < slot_of.size(); ++g) {
        const double* s = cluster_score.data() + g * p;
        for (std::size_t a = 0; a < p; ++a)
            for (std::size_t b = 0; b < p; ++b) meat[a * p + b] += s[a] * s[b];
    }
    out.cov_sandwich = detail::matmul(out.cov_model, detail::matmul(meat, out.cov_model, p), p);
    return out;
}

// ---------------------------------------------------------------------------
// Marginal-model design construction
// ---------------------------------------------------------------------------

// Assemble the pooled-logistic design for the scenario's marginal model: one
// indicator column per event visit, then one column per model term, with a
// row for every person-visit in the kind's risk set.  `weights` — one entry
// per table row, as returned by stabilized_weights — assigns row weights;
// omitted, every weight is 1.
inline design_matrix build_msm_design(const scenario& sc, const person_time_table& t,
                                      hazard_kind kind,
                                      const std::vector<double>* weights = nullptr) {
    if (weights && weights->size() != t.rows())
        throw io_error("weight vector length does not match the table rows");
    const int K = sc.visits;
    design_matrix d;
    for (int j = 1; j <= K; ++j)
        d.names.push_back("intercept[" + std::to_string(j) + "]");
    for (const auto& term : sc.msm.terms) d.names.push_back(term.name);
    const std::size_t p = d.names.size();

    detail::table_walker walk(sc, t);
    if (kind != hazard_kind::plain && !walk.has_d())
        throw io_error("table has no competing-event column 'd'");
    walk.for_each_row([&](std::size_t row, long long id, int k, int y, int dd,
                          const eval_context& ctx) {
        if (!row_in_risk_set(kind, dd)) return;
        const std::size_t base = d.x.size();
        d.x.resize(base + p, 0.0);
        d.x[base + static_cast<std::size_t>(k)] = 1.0;
        std::size_t c = static_cast<std::size_t>(K);
        for (const auto& term : sc.msm.terms) {
            const double v = term.expr.evaluate(ctx);
            if (std::isnan(v))
                throw fit_error("model term '" + term.name + "' is NaN at individual " +
                                std::to_string(id) + " visit " + std::to_string(k));
            d.x[base + c++] = v;
        }
        d.y.push_back(y);
        d.w.push_back(weights ? (*weights)[row] : 1.0);
        d.id.push_back(id);
    });
    return d;
}

// True parameter vector aligned with build_msm_design's columns.
inline std::vector<double> msm_truth(const scenario& sc) {
    std::vector<double> v(sc.msm.intercepts.begin(), sc.msm.intercepts.end());
    for (const auto& term : sc.msm.terms) v.push_back(term.coef);
    return v;
}

// ---------------------------------------------------------------------------
// Stabilized inverse-probability-of-treatment weights
// ---------------------------------------------------------------------------

// Weight at (id, k) = prod_{j <= k} num_j / den_j.  The denominator is the
// scenario's true treatment probability of the observed arm given the full
// history; the numerator is its analog given baseline and past treatment,
// estimated by a pooled logistic model of treatment on visit indicators,
// non-degenerate shared baselines, and the previous treatment.  A scenario
// whose treatment is deterministic (a constant model or a declared
// intervention) puts mass one on the observed arm in both laws, so every
// weight is 1.
inline std::vector<double> stabilized_weights(const scenario& sc,
                                              const person_time_table& t) {
    std::vector<double> w(t.rows(), 1.0);
    if (!sc.intervention.empty() || sc.treatment_model.kind == dist_kind::constant)
        return w;
    if (sc.treatment_model.kind != dist_kind::bernoulli)
        throw fit_error("stabilized weights require a Bernoulli treatment model");

    const int K = sc.visits;
    design_matrix nd;
    for (int k = 0; k < K; ++k) nd.names.push_back("visit[" + std::to_string(k) + "]");
    std::vector<std::pair<std::size_t, std::string>> xcols;
    {
        std::size_t xi = 0;
        for (const auto& v : sc.baseline) {
            if (!v.shared) continue;
            if (v.dist.kind != dist_kind::constant) xcols.emplace_back(xi, v.name);
            ++xi;
        }
    }
    for (const auto& [i, name] : xcols) nd.names.push_back(name);
    nd.names.push_back("a[k-1]");
    const std::size_t p = nd.names.size();

    std::vector<double> den(t.rows(), 1.0);
    std::vector<int> visit_of(t.rows(), 0);
    detail::table_walker walk(sc, t);
    walk.for_each_row([&](std::size_t row, long long id, int k, int, int,
                          const eval_context& ctx) {
        const double pt = sc.treatment_model.p1.evaluate(ctx);
        if (!(pt >= 0.0 && pt <= 1.0))
            throw fit_error("treatment probability " + detail::csv_format_number(pt) +
                            " outside [0,1] at individual " + std::to_string(id) +
                            " visit " + std::to_string(k));
        const double a = ctx.a_at(k);
        const double dn = a != 0.0 ? pt : 1.0 - pt;
        if (dn <= 0.0)
            throw fit_error("positivity violation: individual " + std::to_string(id) +
                            " at visit " + std::to_string(k) +
                            " received a treatment of probability zero");
        den[row] = dn;
        visit_of[row] = k;
        const std::size_t base = nd.x.size();
        nd.x.resize(base + p, 0.0);
        nd.x[base + static_cast<std::size_t>(k)] = 1.0;
        std::size_t c = static_cast<std::size_t>(K);
        for (const auto& [i, name] : xcols) nd.x[base + c++] = ctx.x[i];
        nd.x[base + c++] = ctx.a_at(k - 1);
        nd.y.push_back(a != 0.0 ? 1.0 : 0.0);
        nd.w.push_back(1.0);
        nd.id.push_back(id);
    });

    const fit_result nf = fit_pooled_logistic(nd, false);

    double cum = 1.0;
    for (std::size_t row = 0; row < t.rows(); ++row) {
        const double* xr = nd.x.data() + row * p;
        double eta = 0.0;
        for (std::size_t c = 0; c < p; ++c) eta += xr[c] * nf.beta[c];
        const double pn = expit(eta);
        const double num = nd.y[row] != 0.0 ? pn : 1.0 - pn;
        if (visit_of[row] == 0) cum = 1.0;
        cum *= num / den[row];
        w[row] = cum;
    }
    return w;
}

// ---------------------------------------------------------------------------
// Empirical hazards and model-target validation
// ---------------------------------------------------------------------------

struct hazard_point {
    int visit = 0;  // interval index k; the event under study occurs at k+1
    long long at_risk = 0;
    long long events = 0;
    double hazard = 0.0;
    double se = 0.0;       // sqrt(h(1-h)/at_risk)
    bool defined = false;  // false when the risk set is empty
};

inline std::vector<hazard_point> empirical_hazard(const scenario& sc,
                                                  const person_time_table& t,
                                                  hazard_kind kind) {
    const int K = sc.visits;
    std::vector<hazard_point> out(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) out[static_cast<std::size_t>(k)].visit = k;
    detail::table_walker walk(sc, t);
    if (kind != hazard_kind::plain && !walk.has_d())
        throw io_error("table has no competing-event column 'd'");
    walk.for_each_row([&](std::size_t, long long, int k, int y, int dd,
                          const eval_context&) {
        if (!row_in_risk_set(kind, dd)) return;
        auto& pt = out[static_cast<std::size_t>(k)];
        ++pt.at_risk;
        pt.events += y;
    });
    for (auto& pt : out) {
        if (pt.at_risk == 0) continue;
        pt.defined = true;
        pt.hazard = static_cast<double>(pt.events) / static_cast<double>(pt.at_risk);
        pt.se = std::sqrt(pt.hazard * (1.0 - pt.hazard) /
                          static_cast<double>(pt.at_risk));
    }
    return out;
}

struct validate_point {
    int visit = 0;
    long long at_risk = 0;
    long long events = 0;
    double observed = 0.0;  // events / at_risk
    double target = 0.0;    // mean model hazard over the realized risk set
    double z = 0.0;
    bool defined = false;
};

struct validate_report {
    std::vector<validate_point> points;
    double threshold = 4.0;
    double max_abs_z = 0.0;
    bool pass = true;  // every defined visit has |z| < threshold
};

// Compare empirical hazards against the marginal model.  Conditional on the
// realized risk set, each at-risk row fails independently with its own model
// hazard, so the event count is compared to the sum of row hazards with
// variance sum g(1-g).  The risk-set rule follows the scenario's competing
// variant.  Out-of-range identity-link hazards raise validation_error unless
// `clip_hazards` mirrors a clipped simulation.
inline validate_report validate_hazards(const scenario& sc, const person_time_table& t,
                                        double threshold = 4.0,
                                        bool clip_hazards = false) {
    const hazard_kind kind = hazard_kind_for(sc);
    const int K = sc.visits;
    std::vector<double> esum(static_cast<std::size_t>(K), 0.0);
    std::vector<double> vsum(static_cast<std::size_t>(K), 0.0);
    std::vector<long long> nrisk(static_cast<std::size_t>(K), 0);
    std::vector<long long> nev(static_cast<std::size_t>(K), 0);
    detail::table_walker walk(sc, t);
    if (kind != hazard_kind::plain && !walk.has_d())
        throw io_error("table has no competing-event column 'd'");
    walk.for_each_row([&](std::size_t, long long id, int k, int y, int dd,
                          const eval_context& ctx) {
        if (!row_in_risk_set(kind, dd)) return;
        double g = sc.msm.hazard(k + 1, ctx);
        if (std::isnan(g))
            throw validation_error("model hazard is NaN at individual " +
                                   std::to_string(id) + " visit " + std::to_string(k));
        if (g < 0.0 || g > 1.0) {
            if (!clip_hazards)
                throw validation_error(
                    "model hazard " + detail::csv_format_number(g) +
                    " outside [0,1] at individual " + std::to_string(id) + " visit " +
                    std::to_string(k) + "; validate with hazard clipping to match a "
                    "clipped simulation");
            g = std::min(1.0, std::max(0.0, g));
        }
        const auto kk = static_cast<std::size_t>(k);
        ++nrisk[kk];
        nev[kk] += y;
        esum[kk] += g;
        vsum[kk] += g * (1.0 - g);
    });

    validate_report rep;
    rep.threshold = threshold;
    rep.points.resize(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        auto& pt = rep.points[kk];
        pt.visit = k;
        pt.at_risk = nrisk[kk];
        pt.events = nev[kk];
        if (pt.at_risk == 0) continue;  // hazard undefined; reported missing
        pt.defined = true;
        const double n = static_cast<double>(pt.at_risk);
        pt.observed = static_cast<double>(pt.events) / n;
        pt.target = esum[kk] / n;
        const double diff = static_cast<double>(pt.events) - esum[kk];
        pt.z = vsum[kk] > 0.0
                   ? diff / std::sqrt(vsum[kk])
                   : (diff == 0.0 ? 0.0
                                  : std::copysign(
                                        std::numeric_limits<double>::infinity(), diff));
        rep.max_abs_z = std::max(rep.max_abs_z, std::fabs(pt.z));
        if (!(std::fabs(pt.z) < threshold)) rep.pass = false;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Kolmogorov–Smirnov uniformity test
// ---------------------------------------------------------------------------

// Two-sided KS statistic of a sample against Uniform(0,1).
inline double ks_uniform_statistic(std::vector<double> sample) {
    if (sample.empty())
        throw std::invalid_argument("ks_uniform_statistic: sample is empty");
    std::sort(sample.begin(), sample.end());
    const double n = static_cast<double>(sample.size());
    double d = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const double u = sample[i];
        d = std::max(d, (static_cast<double>(i) + 1.0) / n - u);
        d = std::max(d, u - static_cast<double>(i) / n);
    }
    return d;
}

// Asymptotic two-sided p-value with the usual finite-sample adjustment of
// the effective sample size.  Below the series crossover the complementary
// theta-function expansion is used; it converges fast exactly where the
// alternating series does not.
inline double ks_uniform_pvalue(double d, std::size_t n) {
    if (n == 0) throw std::invalid_argument("ks_uniform_pvalue: n must be positive");
    if (!(d >= 0.0)) throw std::invalid_argument("ks_uniform_pvalue: d must be >= 0");
    const double rn = std::sqrt(static_cast<double>(n));
    const double lambda = (rn + 0.12 + 0.11 / rn) * d;
    if (lambda <= 0.0) return 1.0;
    const double pi = 3.14159265358979323846;
    double p;
    if (lambda < 1.18) {
        double cdf = 0.0;
        for (int j = 1; j <= 20; ++j) {
            const double a = 2.0 * j - 1.0;
            const double term = std::exp(-a * a * pi * pi / (8.0 * lambda * lambda));
            cdf += term;
            if (term < 1e-16 * (cdf + 1.0)) break;
        }
        cdf *= std::sqrt(2.0 * pi) / lambda;
        p = 1.0 - cdf;
    } else {
        p = 0.0;
        double sign = 1.0;
        for (int j = 1; j <= 100; ++j) {
            const double term = std::exp(-2.0 * j * j * lambda * lambda);
            p += sign * term;
            if (term < 1e-16) break;
            sign = -sign;
        }
        p *= 2.0;
    }
    return std::min(1.0, std::max(0.0, p));
}

} // namespace msmsim
