#pragma once

// Simulation engine.
//
// For every individual an ensemble of m clones shares the baseline covariates
// that enter the marginal model and one treatment path, while time-varying
// confounders evolve per clone.  At each visit the clones' risk scores are
// converted to rank-based uniform quantiles U = (R - W)/m, and each clone
// fails with the conditional probability r(g, U) implied by the chosen copula
// given the marginal hazard g.  Averaging r(g, U) over a uniform U returns
// exactly g for every copula, so the recorded path of clone 1 follows the
// marginal structural model by construction while failure remains associated
// with the confounder history through the copula.  Failed clones other than
// clone 1 are replaced by copies of surviving clones so the ensemble always
// represents the conditional law of the confounders among survivors.
//
// Two ways of assigning the conditional probabilities are available:
//
//  * extended:     each clone keeps its own r(g, U_j);
//  * generalised:  the multiset { r(g, U_j) } is sorted ascending and handed
//                  out by risk rank, so the failure probability is always
//                  monotone increasing in the risk score.  When r(g, u) is
//                  itself increasing in u the two assignments coincide
//                  exactly.
//
// Competing events are handled per msmsim/competing.hpp.  All randomness is
// drawn through counter-indexed splittable streams, so every draw has a fixed
// (purpose, counter) address: code paths that skip a draw never shift any
// other stream, and cohorts are byte-identical for any worker count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <msmsim/competing.hpp>
#include <msmsim/copula.hpp>
#include <msmsim/dataset.hpp>
#include <msmsim/errors.hpp>
#include <msmsim/expr.hpp>
#include <msmsim/rng.hpp>
#include <msmsim/scenario.hpp>

namespace msmsim {

// ---------------------------------------------------------------------------
// Treatment regimes
// ---------------------------------------------------------------------------

enum class regime_kind { natural, fixed };

// A treatment regime: either "natural" (draw treatment from the scenario's
// treatment model along clone 1's history) or a fixed value per visit.
struct regime {
    regime_kind kind = regime_kind::natural;
    std::vector<double> pattern;  // one value per visit when fixed

    static regime natural() { return {}; }

    static regime fixed(std::vector<double> values) {
        regime r;
        r.kind = regime_kind::fixed;
        r.pattern = std::move(values);
        return r;
    }

    // Accepts "natural", "all0", "all1", or a comma-separated list with one
    // value per visit.
    static regime from_string(const std::string& text, int visits) {
        const auto strip = [](const std::string& s) {
            const auto a = s.find_first_not_of(" \t");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t");
            return s.substr(a, b - a + 1);
        };
        const std::string t = strip(text);
        if (t == "natural") return natural();
        if (t == "all0") return fixed(std::vector<double>(static_cast<std::size_t>(visits), 0.0));
        if (t == "all1") return fixed(std::vector<double>(static_cast<std::size_t>(visits), 1.0));
        std::vector<double> vals;
        std::size_t pos = 0;
        while (pos <= t.size()) {
            const auto comma = t.find(',', pos);
            const std::string piece = strip(t.substr(pos, comma == std::string::npos
                                                              ? std::string::npos
                                                              : comma - pos));
            try {
                std::size_t used = 0;
                const double v = std::stod(piece, &used);
                if (used != piece.size() || !std::isfinite(v))
                    throw std::invalid_argument(piece);
                vals.push_back(v);
            } catch (const std::exception&) {
                throw config_error(
                    "treatment regime must be 'natural', 'all0', 'all1', or a "
                    "comma-separated list of values (got '" + text + "')");
            }
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (static_cast<int>(vals.size()) != visits)
            throw config_error("treatment regime lists " + std::to_string(vals.size()) +
                               " values but the scenario has " + std::to_string(visits) +
                               " visits");
        return fixed(std::move(vals));
    }

    bool is_fixed() const { return kind == regime_kind::fixed; }

    double value_at(int k) const { return pattern[static_cast<std::size_t>(k)]; }

    std::string to_string() const {
        if (kind == regime_kind::natural) return "natural";
        std::string out;
        for (std::size_t i = 0; i < pattern.size(); ++i) {
            if (i) out += ',';
            out += detail::format_double(pattern[i]);
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Random-stream layout
// ---------------------------------------------------------------------------

// Derivation purposes under each individual's key.  Every draw is addressed
// by (purpose, counter); the counters below are fixed functions of (visit,
// clone slot, variable slot), so streams never shift across code paths.
namespace purpose {
inline constexpr std::uint64_t baseline_shared = 0;  // counter: shared slot
inline constexpr std::uint64_t baseline_clone = 1;   // counter: j * n_clone + slot
inline constexpr std::uint64_t series = 2;           // counter: (k*m + j) * n_series + slot
inline constexpr std::uint64_t treatment = 3;        // counter: k
inline constexpr std::uint64_t main_jitter = 4;      // counter: k*m + j
inline constexpr std::uint64_t main_w = 5;           // counter: k*m + j
inline constexpr std::uint64_t main_v = 6;           // counter: k*m + j
inline constexpr std::uint64_t matching = 7;         // counter: k*m + j
inline constexpr std::uint64_t competing_draw = 8;   // counter: k*m + j
inline constexpr std::uint64_t competing_w = 9;      // counter: k*m + j
inline constexpr std::uint64_t competing_v = 10;     // counter: k*m + j
inline constexpr std::uint64_t refresh = 11;         // counter: rebuild ordinal * m_big + j
} // namespace purpose

// Rank-based uniformisation of a cross-section of scores: U_j = (R_j - W_j)/m
// where R_j is the ascending rank of score j (rank 1 = smallest; ties broken
// by uniform jitter) and W_j ~ U(0,1).  The U_j are exchangeable uniforms on
// (0,1); with m = 1 this reduces to U = 1 - W.
inline std::vector<double> rank_quantiles(const std::vector<double>& scores,
                                          const rng_key& key) {
    if (scores.empty())
        throw std::invalid_argument("rank_quantiles: empty input");
    const std::size_t m = scores.size();
    const rng_key kjit = key.child(0);
    const rng_key kw = key.child(1);
    std::vector<double> jitter(m);
    for (std::size_t j = 0; j < m; ++j) jitter[j] = kjit.uniform_open(j);
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] < scores[b];
        if (jitter[a] != jitter[b]) return jitter[a] < jitter[b];
        return a < b;
    });
    std::vector<double> u(m);
    for (std::size_t r = 0; r < m; ++r) {
        const std::size_t j = order[r];
        u[j] = (static_cast<double>(r + 1) - kw.uniform_open(j)) / static_cast<double>(m);
    }
    return u;
}

// ---------------------------------------------------------------------------
// Inspection
// ---------------------------------------------------------------------------

// One trial observation delivered to an inspector callback.  Records are
// built only when an inspector is installed (which forces a single worker).
//
// trial = 0: a main-event trial.  The per-clone arrays run over the
// participating clones; `matched` lists (replaced slot, donor slot) pairs
// from the matching step that followed, and `refreshed` reports an ensemble
// rebuild after matching.
//
// trial = 1: a competing-event step.  For the cause_specific variant this is
// a full trial with ranks and quantiles; for the subdistribution variant it
// is a per-clone Bernoulli step, so `score`/`rank`/`u` are empty,
// `marginal_hazard` is NaN, and `prob` holds each clone's probability of the
// competing event.
struct visit_record {
    long long individual = 0;
    int visit = 0;    // k: the trial decides survival to visit k+1
    int trial = 0;    // 0 = main event, 1 = competing event
    int ensemble = 0; // number of participating clones
    int clones = 0;   // current ensemble size m
    double marginal_hazard = 0.0;
    double divisor = 1.0;  // probability divisor (subdistribution main trial)

    // Parallel arrays over participating clones.
    std::vector<int> slot;             // clone slot index (0 = clone 1)
    std::vector<long long> identity;   // clone identity I before matching
    std::vector<double> score;         // risk score
    std::vector<int> rank;             // ascending rank, 1..ensemble
    std::vector<double> u;             // rank quantile (R - W)/ensemble
    std::vector<double> prob;          // failure probability actually applied
    std::vector<unsigned char> failed; // trial outcome

    int clamped = 0;  // clones whose probability was clamped to 1
    std::vector<std::pair<int, int>> matched;  // (replaced slot, donor slot)
    bool refreshed = false;
    int clone1_event = 0;  // this visit: 0 none, 1 main event, 2 competing event
};

// ---------------------------------------------------------------------------
// Options and report
// ---------------------------------------------------------------------------

struct sim_options {
    long long individuals = -1;  // < 0: use the scenario's individual count
    std::uint64_t seed = 1;
    // Treatment regime override.  Unset: the scenario's `intervention` if
    // present, otherwise the natural (treatment-model) regime.
    std::optional<regime> treatment;
    int workers = 1;
    // Divide the subdistribution conditional probability by 1 - eligible
    // fraction (the naive reading of the rescaling step) instead of the
    // eligible fraction.  Distorts the marginal law; for demonstrations.
    bool literal_subdist_divisor = false;
    // Identity-link models may produce hazards outside [0,1].  Default is to
    // stop with a simulation error; with this flag the hazard is clipped into
    // [0,1] and the clip is counted in the report.
    bool clip_hazards = false;
    // Diagnostic callback receiving every trial's internals.  Forces a
    // single worker; leave empty for production runs.
    std::function<void(const visit_record&)> inspector;
};

struct sim_report {
    std::vector<individual_path> paths;
    long long clamped_probabilities = 0;  // subdistribution clamps of p to 1
    long long clipped_hazards = 0;        // identity-link hazards clipped into [0,1]
    long long refreshes = 0;              // ensemble rebuilds
};

// Regime actually in force given options and scenario.
inline regime resolve_regime(const scenario& sc, const std::optional<regime>& requested) {
    regime rg = requested             ? *requested
                : !sc.intervention.empty() ? regime::fixed(sc.intervention)
                                           : regime::natural();
    if (rg.is_fixed() && static_cast<int>(rg.pattern.size()) != sc.visits)
        throw config_error("treatment regime lists " + std::to_string(rg.pattern.size()) +
                           " values but the scenario has " + std::to_string(sc.visits) +
                           " visits");
    return rg;
}

// ---------------------------------------------------------------------------
// Engine internals
// ---------------------------------------------------------------------------

namespace detail {

// Hazard validity policy shared by the ensemble and single-path engines.
inline double checked_hazard(const msm_spec& msm, int event_visit, const eval_context& ctx,
                             bool clip, long long& clipped, const char* label) {
    const double g = msm.hazard(event_visit, ctx);
    if (std::isnan(g))
        throw simulation_error(std::string(label) + " is NaN at event visit " +
                               std::to_string(event_visit));
    if (g < 0.0 || g > 1.0) {
        if (!clip)
            throw simulation_error(std::string(label) + " " + format_short(g) +
                                   " is outside [0,1] at event visit " +
                                   std::to_string(event_visit) +
                                   "; fix the model or enable hazard clipping");
        ++clipped;
        return std::min(1.0, std::max(0.0, g));
    }
    return g;
}

// Per-worker simulator.  One instance simulates many individuals
// sequentially, reusing its buffers; all per-individual state is
// re-initialised at the top of run().
class individual_sim {
public:
    individual_sim(const scenario& sc, const sim_options& opt)
        : sc_(sc),
          rg_(resolve_regime(sc, opt.treatment)),
          literal_(opt.literal_subdist_divisor),
          clip_(opt.clip_hazards),
          inspector_(opt.inspector ? &opt.inspector : nullptr),
          K_(sc.visits),
          n_shared_(sc.shared_count()),
          n_clone_(sc.clone_count()),
          n_series_(sc.series_count()) {
        validate();
        for (const auto& v : sc_.baseline)
            (v.shared ? shared_vars_ : clone_vars_).push_back(&v);
        series_defaults_.reserve(sc_.series.size());
        for (const auto& s : sc_.series) series_defaults_.push_back(s.default_value);
        x_.assign(static_cast<std::size_t>(n_shared_), 0.0);
        a_.assign(static_cast<std::size_t>(K_), 0.0);
    }

    individual_path run(long long id, const rng_key& person);

    long long clamped() const { return clamped_; }
    long long clipped() const { return clipped_; }
    long long refreshes() const { return refreshes_; }

private:
    void validate() const {
        if (sc_.visits < 1) throw config_error("scenario must define at least one visit");
        if (sc_.clones < 2) throw config_error("clone ensemble size must be at least 2");
        if (static_cast<int>(sc_.msm.intercepts.size()) != sc_.visits)
            throw config_error("marginal model defines " +
                               std::to_string(sc_.msm.intercepts.size()) +
                               " intercepts for " + std::to_string(sc_.visits) + " visits");
        if (sc_.risk_score.empty()) throw config_error("scenario has no risk score");
        if (!rg_.is_fixed() && sc_.treatment_model.p1.empty())
            throw config_error("scenario has no treatment model; use a fixed regime");
        if (sc_.competing.variant == competing_variant::cause_specific) {
            if (static_cast<int>(sc_.competing.msm.intercepts.size()) != sc_.visits)
                throw config_error("competing marginal model defines " +
                                   std::to_string(sc_.competing.msm.intercepts.size()) +
                                   " intercepts for " + std::to_string(sc_.visits) +
                                   " visits");
            if (sc_.competing.risk_score.empty())
                throw config_error("competing event has no risk score");
        }
        if (sc_.competing.variant == competing_variant::subdistribution &&
            sc_.competing.z_model.p1.empty())
            throw config_error("subdistribution variant requires a z_model");
        // The ensemble may only grow: draw counters are laid out as
        // k * m + j, which stays collision-free across visits only for a
        // nondecreasing m.
        if (sc_.refresh.enabled && sc_.refresh.clones < sc_.clones)
            throw config_error("refresh ensemble size must be at least the clone count");
    }

    // Evaluation context for clone slot j at visit k.
    eval_context clone_ctx(int j, int k) const {
        eval_context ctx;
        ctx.visit = k;
        ctx.x = x_.data();
        ctx.b = b_.data() + static_cast<std::size_t>(j) * n_clone_;
        ctx.series_base = series_.data() +
                          static_cast<std::size_t>(j) * n_series_ * K_;
        ctx.series_stride = static_cast<std::size_t>(K_);
        ctx.series_defaults = series_defaults_.data();
        ctx.a_path = a_.data();
        ctx.a_default = sc_.treatment_default;
        return ctx;
    }

    double* series_block(int j) {
        return series_.data() + static_cast<std::size_t>(j) * n_series_ * K_;
    }

    // Grow scratch buffers to ensemble size cap; optionally (re)size the
    // clone-state buffers as well (initial allocation only — refresh swaps
    // fresh buffers in instead, because it reads old state while writing).
    void ensure_capacity(int cap, bool clone_state) {
        const auto c = static_cast<std::size_t>(cap);
        if (ident_.size() < c) {
            ident_.resize(c);
            failed_.resize(c);
            zfail_.resize(c);
            gone_.resize(c);
            zfree_.resize(c);
            elig_.resize(c);
            donors_.resize(c);
            entries_.resize(c);
            rank_.resize(c);
            score_.resize(c);
            u_.resize(c);
            q_.resize(c);
            qs_.resize(c);
            prob_.resize(c);
        }
        if (clone_state) {
            // At least one element, so block pointers stay non-null even for
            // scenarios without clone-level baselines or series variables.
            if (b_.size() < std::max<std::size_t>(1, c * n_clone_))
                b_.resize(std::max<std::size_t>(1, c * n_clone_));
            const std::size_t sn = c * n_series_ * static_cast<std::size_t>(K_);
            if (series_.size() < std::max<std::size_t>(1, sn))
                series_.resize(std::max<std::size_t>(1, sn));
        }
    }

    double sample_treatment(int k, const rng_key& ka) {
        if (rg_.is_fixed()) return rg_.value_at(k);
        const eval_context ctx = clone_ctx(0, k);
        return sc_.treatment_model.sample(ctx, ka, static_cast<std::uint64_t>(k));
    }

    // Draw the time-varying confounders at visit k for clone j.
    void draw_series(int j, int k, const rng_key& kser) {
        const eval_context ctx = clone_ctx(j, k);
        double* sb = series_block(j);
        const std::uint64_t base =
            (static_cast<std::uint64_t>(k) * m_ + static_cast<std::uint64_t>(j)) *
            static_cast<std::uint64_t>(n_series_);
        for (int s = 0; s < n_series_; ++s)
            sb[static_cast<std::size_t>(s) * K_ + k] =
                sc_.series[static_cast<std::size_t>(s)].dist.sample(ctx, kser, base + s);
    }

    // One coupled failure trial at visit k among the first n_elig slots of
    // elig_.  Writes outcomes into out_fail (slots outside the trial are left
    // untouched) and, when inspecting, fills rec_ (without emitting it).
    void run_trial(long long id, int k, int trial_tag, int n_elig, double g,
                   const compiled_expr& risk, const copula_spec& cop,
                   const rng_key& kjit, const rng_key& kw, const rng_key& kv,
                   double divisor, unsigned char* out_fail) {
        const int M = n_elig;
        const double md = static_cast<double>(M);
        const std::uint64_t km = static_cast<std::uint64_t>(k) * m_;
        for (int i = 0; i < M; ++i) {
            const int j = elig_[static_cast<std::size_t>(i)];
            const eval_context ctx = clone_ctx(j, k);
            const double s = risk.evaluate(ctx);
            if (std::isnan(s))
                throw simulation_error("risk score is NaN at visit " + std::to_string(k));
            score_[static_cast<std::size_t>(i)] = s;
            entries_[static_cast<std::size_t>(i)] = {s, kjit.uniform_open(km + j), j, i};
        }
        // Self-contained sort records keep the comparator free of indirect
        // loads; the slot number breaks exact score-and-jitter ties.
        std::sort(entries_.begin(), entries_.begin() + M,
                  [](const trial_entry& a, const trial_entry& b) {
                      if (a.score != b.score) return a.score < b.score;
                      if (a.jit != b.jit) return a.jit < b.jit;
                      return a.slot < b.slot;
                  });
        for (int r = 0; r < M; ++r)
            rank_[static_cast<std::size_t>(entries_[static_cast<std::size_t>(r)].idx)] =
                r + 1;

        // Rank quantiles and conditional decision values: the failure
        // probability itself, or the equivalent comparison threshold when the
        // family offers one (see conditional_evaluator::threshold).  A hazard
        // of exactly 0 or 1 bypasses the copula (the conditional is constant).
        const bool flat = g <= 0.0 || g >= 1.0;
        std::optional<conditional_evaluator> ev;
        if (!flat) ev.emplace(cop, g);
        const double flat_q = g <= 0.0 ? 0.0 : 1.0;
        for (int i = 0; i < M; ++i) {
            const int j = elig_[static_cast<std::size_t>(i)];
            const double w = kw.uniform_open(km + j);
            const double u = (static_cast<double>(rank_[static_cast<std::size_t>(i)]) - w) / md;
            u_[static_cast<std::size_t>(i)] = u;
            q_[static_cast<std::size_t>(i)] = flat ? flat_q : ev->threshold(u);
        }
        if (sc_.mode == engine_mode::generalised) {
            // Hand the same multiset of decision values out by risk rank.
            // The probability is a nondecreasing function of the decision
            // value, so failure probability increases with the risk score
            // even when the copula conditional is not monotone in u.
            std::copy(q_.begin(), q_.begin() + M, qs_.begin());
            std::sort(qs_.begin(), qs_.begin() + M);
            for (int i = 0; i < M; ++i)
                q_[static_cast<std::size_t>(i)] =
                    qs_[static_cast<std::size_t>(rank_[static_cast<std::size_t>(i)]) - 1];
        }
        int clamped_here = 0;
        const bool zs = !flat && ev->z_space();
        for (int i = 0; i < M; ++i) {
            const int j = elig_[static_cast<std::size_t>(i)];
            double pfail = q_[static_cast<std::size_t>(i)];
            const double v = kv.uniform_open(km + j);
            int fail;
            if (zs && divisor == 1.0) {
                // Decide on the threshold scale; the probability is only
                // materialised when a trial record needs it.
                fail = ev->fails(v, pfail) ? 1 : 0;
                if (inspector_) pfail = ev->prob_of(pfail);
            } else {
                if (zs) pfail = ev->prob_of(pfail);
                if (divisor != 1.0 && pfail > 0.0) {
                    if (divisor <= 0.0) {
                        pfail = 1.0;
                        ++clamped_here;
                    } else {
                        pfail /= divisor;
                        if (pfail > 1.0) {
                            pfail = 1.0;
                            ++clamped_here;
                        }
                    }
                }
                fail = v < pfail ? 1 : 0;
            }
            prob_[static_cast<std::size_t>(i)] = pfail;
            out_fail[j] = fail;
        }
        clamped_ += clamped_here;

        if (inspector_) {
            begin_record(id, k, trial_tag, M, g, divisor);
            rec_.clamped = clamped_here;
            for (int i = 0; i < M; ++i) {
                const auto ii = static_cast<std::size_t>(i);
                const int j = elig_[ii];
                rec_.slot.push_back(j);
                rec_.identity.push_back(ident_[static_cast<std::size_t>(j)]);
                rec_.score.push_back(score_[ii]);
                rec_.rank.push_back(rank_[ii]);
                rec_.u.push_back(u_[ii]);
                rec_.prob.push_back(prob_[ii]);
                rec_.failed.push_back(out_fail[j]);
            }
        }
    }

    // Replace the slots j >= 1 flagged in gone_ with copies of surviving
    // donors.  The donor pool is the snapshot taken before any replacement.
    void match_failed(int k, const rng_key& kmatch, bool copy_z) {
        int n_donors = 0;
        for (int j = 1; j < m_; ++j)
            if (!gone_[static_cast<std::size_t>(j)])
                donors_[static_cast<std::size_t>(n_donors++)] = j;
        const std::uint64_t km = static_cast<std::uint64_t>(k) * m_;
        for (int j = 1; j < m_; ++j) {
            if (!gone_[static_cast<std::size_t>(j)]) continue;
            if (n_donors == 0)
                throw simulation_error("ensemble extinction at visit " +
                                       std::to_string(k + 1) +
                                       ": no surviving clone is left to donate a history");
            const double pick = kmatch.uniform_open(km + j);
            const int d = donors_[std::min<std::size_t>(
                static_cast<std::size_t>(n_donors) - 1,
                static_cast<std::size_t>(pick * n_donors))];
            std::memcpy(b_.data() + static_cast<std::size_t>(j) * n_clone_,
                        b_.data() + static_cast<std::size_t>(d) * n_clone_,
                        sizeof(double) * static_cast<std::size_t>(n_clone_));
            std::memcpy(series_block(j), series_block(d),
                        sizeof(double) * static_cast<std::size_t>(n_series_) * K_);
            ident_[static_cast<std::size_t>(j)] = ident_[static_cast<std::size_t>(d)];
            if (copy_z) zfree_[static_cast<std::size_t>(j)] = zfree_[static_cast<std::size_t>(d)];
            if (inspector_) rec_.matched.emplace_back(j, d);
        }
    }

    // Rebuild the ensemble when too few distinct histories survive: keep
    // clone 1, draw every other slot uniformly (with replacement) from the
    // current ensemble, and reset the identities.
    void maybe_refresh(const rng_key& kref) {
        if (!sc_.refresh.enabled) return;
        int n_distinct = 0;
        {
            scratch_ids_.assign(ident_.begin() + 1, ident_.begin() + m_);
            std::sort(scratch_ids_.begin(), scratch_ids_.end());
            n_distinct = static_cast<int>(
                std::unique(scratch_ids_.begin(), scratch_ids_.end()) - scratch_ids_.begin());
        }
        if (static_cast<double>(n_distinct) > sc_.refresh.threshold * m_) return;
        const int mb = sc_.refresh.clones;
        ensure_capacity(mb, false);
        b2_.resize(std::max<std::size_t>(1, static_cast<std::size_t>(mb) * n_clone_));
        series2_.resize(std::max<std::size_t>(1, static_cast<std::size_t>(mb) * n_series_ * K_));
        zfree2_.resize(static_cast<std::size_t>(mb));
        const std::uint64_t base =
            static_cast<std::uint64_t>(refresh_ordinal_) * static_cast<std::uint64_t>(mb);
        for (int j = 0; j < mb; ++j) {
            int src = 0;
            if (j > 0) {
                const double pick = kref.uniform_open(base + j);
                src = std::min(m_ - 1, static_cast<int>(pick * m_));
            }
            std::memcpy(b2_.data() + static_cast<std::size_t>(j) * n_clone_,
                        b_.data() + static_cast<std::size_t>(src) * n_clone_,
                        sizeof(double) * static_cast<std::size_t>(n_clone_));
            std::memcpy(series2_.data() + static_cast<std::size_t>(j) * n_series_ * K_,
                        series_block(src),
                        sizeof(double) * static_cast<std::size_t>(n_series_) * K_);
            zfree2_[static_cast<std::size_t>(j)] = zfree_[static_cast<std::size_t>(src)];
        }
        b_.swap(b2_);
        series_.swap(series2_);
        zfree_.swap(zfree2_);
        m_ = mb;
        std::iota(ident_.begin(), ident_.begin() + m_, 0LL);
        ++refreshes_;
        ++refresh_ordinal_;
        if (inspector_) rec_.refreshed = true;
    }

    void begin_record(long long id, int k, int trial_tag, int ensemble, double g,
                      double divisor) {
        rec_.individual = id;
        rec_.visit = k;
        rec_.trial = trial_tag;
        rec_.ensemble = ensemble;
        rec_.clones = m_;
        rec_.marginal_hazard = g;
        rec_.divisor = divisor;
        rec_.slot.clear();
        rec_.identity.clear();
        rec_.score.clear();
        rec_.rank.clear();
        rec_.u.clear();
        rec_.prob.clear();
        rec_.failed.clear();
        rec_.clamped = 0;
        rec_.matched.clear();
        rec_.refreshed = false;
        rec_.clone1_event = 0;
    }

    void emit_record(int clone1_event) {
        rec_.clone1_event = clone1_event;
        (*inspector_)(rec_);
    }

    const scenario& sc_;
    regime rg_;
    bool literal_ = false;
    bool clip_ = false;
    const std::function<void(const visit_record&)>* inspector_ = nullptr;
    int K_ = 0;
    int n_shared_ = 0;
    int n_clone_ = 0;
    int n_series_ = 0;
    std::vector<const baseline_var*> shared_vars_, clone_vars_;
    std::vector<double> series_defaults_;

    int m_ = 0;
    std::vector<double> x_, a_, b_, series_, b2_, series2_;
    std::vector<long long> ident_, scratch_ids_;
    std::vector<unsigned char> failed_, zfail_, gone_, zfree_, zfree2_;
    struct trial_entry {
        double score;
        double jit;
        int slot;
        int idx;  // position in elig_, where rank_ is written back
    };

    std::vector<int> elig_, donors_, rank_;
    std::vector<trial_entry> entries_;
    std::vector<double> score_, u_, q_, qs_, prob_;
    visit_record rec_;
    int refresh_ordinal_ = 0;

    long long clamped_ = 0;
    long long clipped_ = 0;
    long long refreshes_ = 0;
};

inline individual_path individual_sim::run(long long id, const rng_key& person) {
    const rng_key kx = person.child(purpose::baseline_shared);
    const rng_key kb = person.child(purpose::baseline_clone);
    const rng_key kser = person.child(purpose::series);
    const rng_key ka = person.child(purpose::treatment);
    const rng_key kjit = person.child(purpose::main_jitter);
    const rng_key kw = person.child(purpose::main_w);
    const rng_key kv = person.child(purpose::main_v);
    const rng_key kmatch = person.child(purpose::matching);
    const rng_key kz = person.child(purpose::competing_draw);
    const rng_key kzw = person.child(purpose::competing_w);
    const rng_key kzv = person.child(purpose::competing_v);
    const rng_key kref = person.child(purpose::refresh);

    m_ = sc_.clones;
    refresh_ordinal_ = 0;
    ensure_capacity(m_, true);

    // Baseline covariates: shared ones once, clone-level ones per clone.
    {
        eval_context ctx = clone_ctx(0, 0);
        for (std::size_t i = 0; i < shared_vars_.size(); ++i)
            x_[i] = shared_vars_[i]->dist.sample(ctx, kx, i);
        for (int j = 0; j < m_; ++j) {
            ctx.b = b_.data() + static_cast<std::size_t>(j) * n_clone_;
            for (std::size_t i = 0; i < clone_vars_.size(); ++i)
                b_[static_cast<std::size_t>(j) * n_clone_ + i] = clone_vars_[i]->dist.sample(
                    ctx, kb, static_cast<std::uint64_t>(j) * n_clone_ + i);
        }
    }
    std::iota(ident_.begin(), ident_.begin() + m_, 0LL);
    std::fill(zfree_.begin(), zfree_.begin() + m_, static_cast<unsigned char>(1));

    const auto variant = sc_.competing.variant;
    int event = 0;
    int comp = 0;
    int last_k = -1;

    for (int k = 0; k < K_; ++k) {
        last_k = k;
        std::fill(failed_.begin(), failed_.begin() + m_, static_cast<unsigned char>(0));
        std::fill(zfail_.begin(), zfail_.begin() + m_, static_cast<unsigned char>(0));

        // Time-varying confounders evolve for every clone (including clones
        // already past a subdistribution competing event: they stay in the
        // risk set and may donate their histories).
        for (int j = 0; j < m_; ++j) draw_series(j, k, kser);

        // Treatment for this visit, from clone 1's history under the natural
        // regime.  Under a fixed regime no draw is consumed.
        a_[static_cast<std::size_t>(k)] = sample_treatment(k, ka);

        // Eligibility for the main-event trial.
        int n_elig = 0;
        double divisor = 1.0;

        if (variant == competing_variant::subdistribution) {
            // Competing-event step: clones still free of the competing event
            // stay free with probability z_model; the state is absorbing.
            int n_free_before = 0;
            for (int j = 0; j < m_; ++j)
                if (zfree_[static_cast<std::size_t>(j)])
                    elig_[static_cast<std::size_t>(n_free_before++)] = j;
            if (inspector_)
                begin_record(id, k, 1, n_free_before,
                             std::numeric_limits<double>::quiet_NaN(), 1.0);
            const std::uint64_t km = static_cast<std::uint64_t>(k) * m_;
            for (int i = 0; i < n_free_before; ++i) {
                const int j = elig_[static_cast<std::size_t>(i)];
                const eval_context ctx = clone_ctx(j, k);
                const double stay = sc_.competing.z_model.sample(ctx, kz, km + j);
                zfree_[static_cast<std::size_t>(j)] = stay != 0.0 ? 1 : 0;
                if (inspector_) {
                    rec_.slot.push_back(j);
                    rec_.identity.push_back(ident_[static_cast<std::size_t>(j)]);
                    rec_.prob.push_back(1.0 - sc_.competing.z_model.p1.evaluate(ctx));
                    rec_.failed.push_back(stay != 0.0 ? 0 : 1);
                }
            }
            if (!zfree_[0]) {
                comp = k + 1;
                if (inspector_) emit_record(2);
                // Clone 1 remains in the subdistribution risk set, so its
                // covariate and treatment path continue to the end of
                // follow-up; only the failure machinery stops.
                for (int k2 = k + 1; k2 < K_; ++k2) {
                    draw_series(0, k2, kser);
                    a_[static_cast<std::size_t>(k2)] = sample_treatment(k2, ka);
                }
                last_k = K_ - 1;
                break;
            }
            if (inspector_) emit_record(0);
            for (int j = 0; j < m_; ++j)
                if (zfree_[static_cast<std::size_t>(j)])
                    elig_[static_cast<std::size_t>(n_elig++)] = j;
            const double ef = static_cast<double>(n_elig) / static_cast<double>(m_);
            divisor = subdistribution_divisor(ef, literal_);
        } else if (variant == competing_variant::cause_specific) {
            // Competing-event trial first, among all clones (every clone is
            // alive and competing-event-free at the start of each visit).
            for (int j = 0; j < m_; ++j) elig_[static_cast<std::size_t>(j)] = j;
            eval_context ctx0 = clone_ctx(0, k);
            const double gz = checked_hazard(sc_.competing.msm, k + 1, ctx0, clip_,
                                             clipped_, "competing marginal hazard");
            run_trial(id, k, 1, m_, gz, sc_.competing.risk_score, sc_.competing.copula,
                      kz, kzw, kzv, 1.0, zfail_.data());
            if (zfail_[0]) {
                comp = k + 1;
                if (inspector_) emit_record(2);
                break;
            }
            if (inspector_) emit_record(0);
            for (int j = 0; j < m_; ++j)
                if (!zfail_[static_cast<std::size_t>(j)])
                    elig_[static_cast<std::size_t>(n_elig++)] = j;
        } else {
            for (int j = 0; j < m_; ++j) elig_[static_cast<std::size_t>(j)] = j;
            n_elig = m_;
        }

        // Main-event trial.
        double g;
        {
            eval_context ctx0 = clone_ctx(0, k);
            g = checked_hazard(sc_.msm, k + 1, ctx0, clip_, clipped_, "marginal hazard");
        }
        if (variant == competing_variant::subdistribution && !literal_)
            check_subdistribution_feasible(
                g, static_cast<double>(n_elig) / static_cast<double>(m_), k + 1);
        run_trial(id, k, 0, n_elig, g, sc_.risk_score, sc_.copula, kjit, kw, kv, divisor,
                  failed_.data());

        if (failed_[0]) {
            event = k + 1;
            if (inspector_) emit_record(1);
            break;
        }
        if (k + 1 < K_) {
            // Replace failed clones (and, for the cause_specific variant,
            // clones removed by the competing event) with copies of
            // survivors, then rebuild the ensemble if too few distinct
            // histories remain.
            if (variant == competing_variant::cause_specific) {
                for (int j = 0; j < m_; ++j)
                    gone_[static_cast<std::size_t>(j)] = static_cast<unsigned char>(
                        failed_[static_cast<std::size_t>(j)] | zfail_[static_cast<std::size_t>(j)]);
            } else {
                std::copy(failed_.begin(), failed_.begin() + m_, gone_.begin());
            }
            match_failed(k, kmatch, variant == competing_variant::subdistribution);
            maybe_refresh(kref);
        }
        if (inspector_) emit_record(0);
    }

    individual_path p;
    p.id = id;
    p.visits = K_;
    p.event_visit = event;
    p.comp_visit = comp;
    p.x.assign(x_.begin(), x_.end());
    p.b.assign(b_.begin(), b_.begin() + n_clone_);
    p.series.assign(static_cast<std::size_t>(n_series_) * K_, 0.0);
    p.a.assign(static_cast<std::size_t>(K_), 0.0);
    const double* s0 = series_.data();
    for (int s = 0; s < n_series_; ++s)
        for (int t = 0; t <= last_k; ++t)
            p.series[static_cast<std::size_t>(s) * K_ + t] =
                s0[static_cast<std::size_t>(s) * K_ + t];
    for (int t = 0; t <= last_k; ++t) p.a[static_cast<std::size_t>(t)] = a_[static_cast<std::size_t>(t)];
    return p;
}

// Wrap per-individual failures with the individual id so cohort errors are
// actionable regardless of worker layout.
template <typename F>
auto with_individual_context(long long id, F&& body) {
    try {
        return body();
    } catch (const simulation_error& e) {
        throw simulation_error("individual " + std::to_string(id) + ": " + e.what());
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Public entry points
// ---------------------------------------------------------------------------

// Simulate a single individual's clone ensemble and return clone 1's path.
// simulate_cohort(n individuals) is byte-identical to calling this with
// id = 1..n under the same options.
inline individual_path run_extended_individual(const scenario& sc,
                                               const sim_options& opt = {},
                                               long long id = 1) {
    detail::individual_sim sim(sc, opt);
    return detail::with_individual_context(
        id, [&] { return sim.run(id, rng_key(opt.seed).child(static_cast<std::uint64_t>(id))); });
}

// Simulate a cohort.  Individuals are split into contiguous id blocks across
// workers; each draw is addressed by (individual, purpose, counter), so the
// result is byte-identical for every worker count.  When several individuals
// fail, the error reported is the one with the smallest id (matching a
// sequential run).
inline sim_report simulate_cohort(const scenario& sc, const sim_options& opt = {}) {
    const long long n = opt.individuals >= 0 ? opt.individuals : sc.individuals;
    if (n < 0) throw config_error("individual count must be non-negative");
    int workers = opt.workers > 0 ? opt.workers : 1;
    if (opt.inspector) workers = 1;  // inspection is inherently sequential
    workers = static_cast<int>(std::min<long long>(workers, std::max<long long>(n, 1)));

    sim_report rep;
    rep.paths.resize(static_cast<std::size_t>(n));
    const rng_key root(opt.seed);

    if (workers == 1) {
        detail::individual_sim sim(sc, opt);
        for (long long id = 1; id <= n; ++id)
            rep.paths[static_cast<std::size_t>(id - 1)] = detail::with_individual_context(
                id, [&] { return sim.run(id, root.child(static_cast<std::uint64_t>(id))); });
        rep.clamped_probabilities = sim.clamped();
        rep.clipped_hazards = sim.clipped();
        rep.refreshes = sim.refreshes();
        return rep;
    }

    std::mutex mu;
    long long err_id = -1;
    std::exception_ptr err;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    const long long base = n / workers;
    const long long rem = n % workers;
    for (int w = 0; w < workers; ++w) {
        const long long lo = 1 + w * base + std::min<long long>(w, rem);
        const long long hi = lo + base + (w < rem ? 1 : 0);
        pool.emplace_back([&, lo, hi] {
            // 0 marks a failure before any individual (construction/config);
            // it sorts before every id so it is reported unwrapped, exactly
            // as a sequential run would surface it.
            long long at = 0;
            try {
                detail::individual_sim sim(sc, opt);
                for (long long id = lo; id < hi; ++id) {
                    {
                        std::lock_guard<std::mutex> g(mu);
                        if (err_id >= 0 && err_id < id) return;
                    }
                    at = id;
                    rep.paths[static_cast<std::size_t>(id - 1)] =
                        detail::with_individual_context(
                            id, [&] { return sim.run(id, root.child(static_cast<std::uint64_t>(id))); });
                }
                std::lock_guard<std::mutex> g(mu);
                rep.clamped_probabilities += sim.clamped();
                rep.clipped_hazards += sim.clipped();
                rep.refreshes += sim.refreshes();
            } catch (...) {
                std::lock_guard<std::mutex> g(mu);
                if (err_id < 0 || at < err_id) {
                    err_id = at;
                    err = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
    return rep;
}

// ---------------------------------------------------------------------------
// Single-path reference engine
// ---------------------------------------------------------------------------

// Conditional CDF of the risk score supplied to run_basic_individual: maps
// (visit, score, context) to the probability that a random clone's score at
// this visit falls below `score`, i.e. the exact distribution the clone
// ensemble approximates with ranks.
using risk_cdf_fn = std::function<double(int visit, double score, const eval_context& ctx)>;

// Reference single-path simulator: one clone whose risk quantile comes from
// an externally supplied conditional CDF instead of ensemble ranks.  Shares
// the extended engine's stream layout at m = 1 (no jitter, rank-W, or
// matching draws are consumed), so it matches the ensemble engine in
// distribution when the supplied CDF is exact.  Supports the plain variant
// only.
inline individual_path run_basic_individual(const scenario& sc, const risk_cdf_fn& risk_cdf,
                                            const sim_options& opt = {}, long long id = 1) {
    if (sc.competing.variant != competing_variant::none)
        throw config_error("run_basic_individual supports only scenarios without a competing event");
    if (!risk_cdf) throw config_error("run_basic_individual requires a risk CDF");
    if (sc.visits < 1) throw config_error("scenario must define at least one visit");
    if (static_cast<int>(sc.msm.intercepts.size()) != sc.visits)
        throw config_error("marginal model defines " + std::to_string(sc.msm.intercepts.size()) +
                           " intercepts for " + std::to_string(sc.visits) + " visits");
    const regime rg = resolve_regime(sc, opt.treatment);
    if (!rg.is_fixed() && sc.treatment_model.p1.empty())
        throw config_error("scenario has no treatment model; use a fixed regime");

    const rng_key person = rng_key(opt.seed).child(static_cast<std::uint64_t>(id));
    const rng_key kx = person.child(purpose::baseline_shared);
    const rng_key kb = person.child(purpose::baseline_clone);
    const rng_key kser = person.child(purpose::series);
    const rng_key ka = person.child(purpose::treatment);
    const rng_key kv = person.child(purpose::main_v);

    const int K = sc.visits;
    const int n_series = sc.series_count();
    individual_path p;
    p.id = id;
    p.visits = K;
    p.x.assign(static_cast<std::size_t>(sc.shared_count()), 0.0);
    p.b.assign(static_cast<std::size_t>(sc.clone_count()), 0.0);
    p.series.assign(static_cast<std::size_t>(n_series) * K, 0.0);
    p.a.assign(static_cast<std::size_t>(K), 0.0);
    std::vector<double> series_defaults;
    series_defaults.reserve(sc.series.size());
    for (const auto& s : sc.series) series_defaults.push_back(s.default_value);

    eval_context ctx;
    ctx.x = p.x.data();
    ctx.b = p.b.data();
    ctx.series_base = p.series.data();
    ctx.series_stride = static_cast<std::size_t>(K);
    ctx.series_defaults = series_defaults.data();
    ctx.a_path = p.a.data();
    ctx.a_default = sc.treatment_default;

    return detail::with_individual_context(id, [&] {
        ctx.visit = 0;
        std::size_t xi = 0, bi = 0;
        for (const auto& v : sc.baseline) {
            if (v.shared) p.x[xi] = v.dist.sample(ctx, kx, xi), ++xi;
            else p.b[bi] = v.dist.sample(ctx, kb, bi), ++bi;
        }
        long long clipped = 0;
        for (int k = 0; k < K; ++k) {
            ctx.visit = k;
            for (int s = 0; s < n_series; ++s)
                p.series[static_cast<std::size_t>(s) * K + k] =
                    sc.series[static_cast<std::size_t>(s)].dist.sample(
                        ctx, kser, static_cast<std::uint64_t>(k) * n_series + s);
            p.a[static_cast<std::size_t>(k)] =
                rg.is_fixed() ? rg.value_at(k)
                              : sc.treatment_model.sample(ctx, ka, static_cast<std::uint64_t>(k));
            const double g = detail::checked_hazard(sc.msm, k + 1, ctx, opt.clip_hazards,
                                                    clipped, "marginal hazard");
            const double score = sc.risk_score.evaluate(ctx);
            if (std::isnan(score))
                throw simulation_error("risk score is NaN at visit " + std::to_string(k));
            const double u = risk_cdf(k, score, ctx);
            if (!(u > 0.0 && u < 1.0))
                throw simulation_error("risk CDF returned " + detail::format_short(u) +
                                       " outside (0,1) at visit " + std::to_string(k));
            double q;
            if (g <= 0.0) q = 0.0;
            else if (g >= 1.0) q = 1.0;
            else q = conditional_prob(sc.copula, g, u);
            if (kv.uniform_open(static_cast<std::uint64_t>(k)) < q) {
                p.event_visit = k + 1;
                break;
            }
        }
        return p;
    });
}

} // namespace msmsim
