#pragma once

// Arithmetic expression language used throughout scenario files: visit
// number k, baseline variables (bare names), time-varying series and
// treatment (indexed as name[k] or name[k-c]), literals, + - * / ^, and a
// small function set.  Expressions are parsed once against an environment
// that says which references are legal at the site, then compiled to a flat
// postfix program evaluated with no allocation.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <msmsim/errors.hpp>
#include <msmsim/special_functions.hpp>

namespace msmsim {

// What a name refers to at an expression site.
enum class ref_kind : char {
    baseline_shared = 'x',  // shared across clones (MSM covariates)
    baseline_clone = 'b',   // per-clone baseline
    series = 'l',           // time-varying, indexed [k-c]
    treatment = 'a',        // the treatment path, indexed [k-c]
};

// Site description for parsing: names in scope plus lag floors.  A lag floor
// of 0 means the current visit may be referenced; 1 means only strict lags.
struct expr_env {
    struct entry {
        ref_kind kind;
        int slot = 0;
        int min_lag = 0;  // for series/treatment references
    };
    std::map<std::string, entry> vars;

    void add_baseline_shared(const std::string& name, int slot) {
        vars[name] = {ref_kind::baseline_shared, slot, 0};
    }
    void add_baseline_clone(const std::string& name, int slot) {
        vars[name] = {ref_kind::baseline_clone, slot, 0};
    }
    void add_series(const std::string& name, int slot, int min_lag) {
        vars[name] = {ref_kind::series, slot, min_lag};
    }
    void add_treatment(const std::string& name, int min_lag) {
        vars[name] = {ref_kind::treatment, 0, min_lag};
    }
};

// Values an expression reads during evaluation.  Series values are stored
// visit-major per slot: series_base[slot * series_stride + t] is the value
// of series `slot` at visit t; visits below zero use the per-slot default.
struct eval_context {
    int visit = 0;
    const double* x = nullptr;
    const double* b = nullptr;
    const double* series_base = nullptr;
    std::size_t series_stride = 0;
    const double* series_defaults = nullptr;
    const double* a_path = nullptr;
    double a_default = 0.0;

    double series_at(int slot, int t) const {
        if (t < 0) return series_defaults[slot];
        return series_base[static_cast<std::size_t>(slot) * series_stride +
                           static_cast<std::size_t>(t)];
    }
    double a_at(int t) const { return t < 0 ? a_default : a_path[t]; }
};

namespace detail {

enum class opcode : std::uint8_t {
    push_const,
    push_k,
    push_x,
    push_b,
    push_series,  // i0 = slot, i1 = lag
    push_a,       // i1 = lag
    add,
    sub,
    mul,
    divide,
    neg,
    pow_op,
    fn_exp,
    fn_log,
    fn_expit,
    fn_logit_clamped,
    fn_abs,
    fn_sqrt,
    fn_min,
    fn_max,
    // Fused forms produced by the peephole pass over the postfix program.
    // Every fused instruction performs the same IEEE operations in the same
    // order as the sequence it replaces, so results are bit-identical; the
    // fusion only removes dispatch and stack traffic on the hot affine
    // expressions (sums of optionally scaled variable references).
    ld_x_scaled,       // push val * x[i0]
    ld_b_scaled,       // push val * b[i0]
    ld_series_scaled,  // push val * series[i0][k - i1]
    ld_a_scaled,       // push val * a[k - i1]
    acc_add_const,     // top += val
    acc_sub_const,     // top -= val
    acc_add_x,         // top += x[i0]
    acc_sub_x,
    acc_add_b,
    acc_sub_b,
    acc_add_series,  // top += series[i0][k - i1]
    acc_sub_series,
    acc_add_a,  // top += a[k - i1]
    acc_sub_a,
    acc_add_x_scaled,  // top += val * x[i0]
    acc_sub_x_scaled,
    acc_add_b_scaled,
    acc_sub_b_scaled,
    acc_add_series_scaled,
    acc_sub_series_scaled,
    acc_add_a_scaled,
    acc_sub_a_scaled,
};

struct instruction {
    opcode op;
    int i0 = 0;
    int i1 = 0;
    double val = 0.0;
};

struct token {
    enum class type { number, ident, symbol, end } ty;
    std::string text;
    double num = 0.0;
    int pos = 0;  // column, 1-based
};

class tokenizer {
public:
    explicit tokenizer(const std::string& src) : src_(src) {}

    token next() {
        while (i_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[i_])))
            ++i_;
        token t;
        t.pos = static_cast<int>(i_) + 1;
        if (i_ >= src_.size()) {
            t.ty = token::type::end;
            return t;
        }
        const char c = src_[i_];
        if (std::isdigit(static_cast<unsigned char>(c)) ||
            (c == '.' && i_ + 1 < src_.size() &&
             std::isdigit(static_cast<unsigned char>(src_[i_ + 1])))) {
            std::size_t used = 0;
            t.ty = token::type::number;
            try {
                t.num = std::stod(src_.substr(i_), &used);
            } catch (const std::exception&) {
                throw config_error(err_at(t.pos, "malformed number"));
            }
            t.text = src_.substr(i_, used);
            i_ += used;
            return t;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t j = i_;
            while (j < src_.size() &&
                   (std::isalnum(static_cast<unsigned char>(src_[j])) || src_[j] == '_'))
                ++j;
            t.ty = token::type::ident;
            t.text = src_.substr(i_, j - i_);
            i_ = j;
            return t;
        }
        if (std::string("+-*/^()[],").find(c) != std::string::npos) {
            t.ty = token::type::symbol;
            t.text = std::string(1, c);
            ++i_;
            return t;
        }
        throw config_error(err_at(t.pos, std::string("unexpected character '") + c + "'"));
    }

    std::string err_at(int pos, const std::string& msg) const {
        return "expression error at column " + std::to_string(pos) + ": " + msg +
               "\n  in: " + src_;
    }

private:
    const std::string& src_;
    std::size_t i_ = 0;
};

// Rewrites a postfix program into fewer, wider instructions.  Three passes:
// fold a negation into a literal, fuse const*var products into scaled loads,
// then fold a following add/sub into the load so affine expressions run as
// one accumulate instruction per term.  Each rewrite performs the identical
// IEEE arithmetic (negation and multiplication commute exactly), so fused
// programs evaluate bit-for-bit the same as unfused ones.
inline void peephole(std::vector<instruction>& prog) {
    auto var_push = [](opcode op) {
        return op == opcode::push_x || op == opcode::push_b ||
               op == opcode::push_series || op == opcode::push_a;
    };
    auto scaled_of = [](opcode op) {
        switch (op) {
            case opcode::push_x: return opcode::ld_x_scaled;
            case opcode::push_b: return opcode::ld_b_scaled;
            case opcode::push_series: return opcode::ld_series_scaled;
            default: return opcode::ld_a_scaled;
        }
    };

    std::vector<instruction> out;
    out.reserve(prog.size());

    // Negated literals: [const c][neg] -> [const -c].
    for (std::size_t i = 0; i < prog.size(); ++i) {
        if (prog[i].op == opcode::neg && !out.empty() &&
            out.back().op == opcode::push_const) {
            out.back().val = -out.back().val;
            continue;
        }
        out.push_back(prog[i]);
    }
    prog.swap(out);
    out.clear();

    // Scaled loads: [const][var][mul] and [var][const][mul].
    for (std::size_t i = 0; i < prog.size();) {
        if (i + 2 < prog.size() && prog[i + 2].op == opcode::mul) {
            const instruction& f = prog[i];
            const instruction& s = prog[i + 1];
            if (f.op == opcode::push_const && var_push(s.op)) {
                out.push_back({scaled_of(s.op), s.i0, s.i1, f.val});
                i += 3;
                continue;
            }
            if (var_push(f.op) && s.op == opcode::push_const) {
                out.push_back({scaled_of(f.op), f.i0, f.i1, s.val});
                i += 3;
                continue;
            }
        }
        out.push_back(prog[i++]);
    }
    prog.swap(out);
    out.clear();

    // Accumulations: a pure load followed by add/sub becomes one in-place
    // update of the value beneath it.
    for (std::size_t i = 0; i < prog.size(); ++i) {
        const instruction& ins = prog[i];
        const bool is_add = ins.op == opcode::add;
        if ((is_add || ins.op == opcode::sub) && !out.empty()) {
            opcode fused;
            bool match = true;
            switch (out.back().op) {
                case opcode::push_const:
                    fused = is_add ? opcode::acc_add_const : opcode::acc_sub_const;
                    break;
                case opcode::push_x:
                    fused = is_add ? opcode::acc_add_x : opcode::acc_sub_x;
                    break;
                case opcode::push_b:
                    fused = is_add ? opcode::acc_add_b : opcode::acc_sub_b;
                    break;
                case opcode::push_series:
                    fused = is_add ? opcode::acc_add_series : opcode::acc_sub_series;
                    break;
                case opcode::push_a:
                    fused = is_add ? opcode::acc_add_a : opcode::acc_sub_a;
                    break;
                case opcode::ld_x_scaled:
                    fused = is_add ? opcode::acc_add_x_scaled : opcode::acc_sub_x_scaled;
                    break;
                case opcode::ld_b_scaled:
                    fused = is_add ? opcode::acc_add_b_scaled : opcode::acc_sub_b_scaled;
                    break;
                case opcode::ld_series_scaled:
                    fused = is_add ? opcode::acc_add_series_scaled
                                   : opcode::acc_sub_series_scaled;
                    break;
                case opcode::ld_a_scaled:
                    fused = is_add ? opcode::acc_add_a_scaled : opcode::acc_sub_a_scaled;
                    break;
                default: match = false; fused = opcode::add; break;
            }
            if (match) {
                out.back().op = fused;
                continue;
            }
        }
        out.push_back(ins);
    }
    prog.swap(out);
}

} // namespace detail

// A parsed, compiled expression.  Evaluation never allocates and never
// throws; invalid operations propagate NaN/inf for the caller to check.
class compiled_expr {
public:
    compiled_expr() = default;

    double evaluate(const eval_context& ctx) const noexcept {
        double stack[64];
        int sp = 0;
        for (const auto& ins : prog_) {
            using detail::opcode;
            switch (ins.op) {
                case opcode::push_const: stack[sp++] = ins.val; break;
                case opcode::push_k: stack[sp++] = static_cast<double>(ctx.visit); break;
                case opcode::push_x: stack[sp++] = ctx.x[ins.i0]; break;
                case opcode::push_b: stack[sp++] = ctx.b[ins.i0]; break;
                case opcode::push_series:
                    stack[sp++] = ctx.series_at(ins.i0, ctx.visit - ins.i1);
                    break;
                case opcode::push_a: stack[sp++] = ctx.a_at(ctx.visit - ins.i1); break;
                case opcode::add: --sp; stack[sp - 1] += stack[sp]; break;
                case opcode::sub: --sp; stack[sp - 1] -= stack[sp]; break;
                case opcode::mul: --sp; stack[sp - 1] *= stack[sp]; break;
                case opcode::divide: --sp; stack[sp - 1] /= stack[sp]; break;
                case opcode::neg: stack[sp - 1] = -stack[sp - 1]; break;
                case opcode::pow_op:
                    --sp;
                    stack[sp - 1] = std::pow(stack[sp - 1], stack[sp]);
                    break;
                case opcode::fn_exp: stack[sp - 1] = std::exp(stack[sp - 1]); break;
                case opcode::fn_log: stack[sp - 1] = std::log(stack[sp - 1]); break;
                case opcode::fn_expit: stack[sp - 1] = expit(stack[sp - 1]); break;
                case opcode::fn_logit_clamped: {
                    const double p = stack[sp - 1];
                    stack[sp - 1] = (p > 0.0 && p < 1.0)
                                        ? std::log(p / (1.0 - p))
                                        : std::numeric_limits<double>::quiet_NaN();
                    break;
                }
                case opcode::fn_abs: stack[sp - 1] = std::fabs(stack[sp - 1]); break;
                case opcode::fn_sqrt: stack[sp - 1] = std::sqrt(stack[sp - 1]); break;
                case opcode::fn_min:
                    --sp;
                    stack[sp - 1] = std::min(stack[sp - 1], stack[sp]);
                    break;
                case opcode::fn_max:
                    --sp;
                    stack[sp - 1] = std::max(stack[sp - 1], stack[sp]);
                    break;
                case opcode::ld_x_scaled: stack[sp++] = ins.val * ctx.x[ins.i0]; break;
                case opcode::ld_b_scaled: stack[sp++] = ins.val * ctx.b[ins.i0]; break;
                case opcode::ld_series_scaled:
                    stack[sp++] = ins.val * ctx.series_at(ins.i0, ctx.visit - ins.i1);
                    break;
                case opcode::ld_a_scaled:
                    stack[sp++] = ins.val * ctx.a_at(ctx.visit - ins.i1);
                    break;
                case opcode::acc_add_const: stack[sp - 1] += ins.val; break;
                case opcode::acc_sub_const: stack[sp - 1] -= ins.val; break;
                case opcode::acc_add_x: stack[sp - 1] += ctx.x[ins.i0]; break;
                case opcode::acc_sub_x: stack[sp - 1] -= ctx.x[ins.i0]; break;
                case opcode::acc_add_b: stack[sp - 1] += ctx.b[ins.i0]; break;
                case opcode::acc_sub_b: stack[sp - 1] -= ctx.b[ins.i0]; break;
                case opcode::acc_add_series:
                    stack[sp - 1] += ctx.series_at(ins.i0, ctx.visit - ins.i1);
                    break;
                case opcode::acc_sub_series:
                    stack[sp - 1] -= ctx.series_at(ins.i0, ctx.visit - ins.i1);
                    break;
                case opcode::acc_add_a:
                    stack[sp - 1] += ctx.a_at(ctx.visit - ins.i1);
                    break;
                case opcode::acc_sub_a:
                    stack[sp - 1] -= ctx.a_at(ctx.visit - ins.i1);
                    break;
                case opcode::acc_add_x_scaled:
                    stack[sp - 1] += ins.val * ctx.x[ins.i0];
                    break;
                case opcode::acc_sub_x_scaled:
                    stack[sp - 1] -= ins.val * ctx.x[ins.i0];
                    break;
                case opcode::acc_add_b_scaled:
                    stack[sp - 1] += ins.val * ctx.b[ins.i0];
                    break;
                case opcode::acc_sub_b_scaled:
                    stack[sp - 1] -= ins.val * ctx.b[ins.i0];
                    break;
                case opcode::acc_add_series_scaled:
                    stack[sp - 1] += ins.val * ctx.series_at(ins.i0, ctx.visit - ins.i1);
                    break;
                case opcode::acc_sub_series_scaled:
                    stack[sp - 1] -= ins.val * ctx.series_at(ins.i0, ctx.visit - ins.i1);
                    break;
                case opcode::acc_add_a_scaled:
                    stack[sp - 1] += ins.val * ctx.a_at(ctx.visit - ins.i1);
                    break;
                case opcode::acc_sub_a_scaled:
                    stack[sp - 1] -= ins.val * ctx.a_at(ctx.visit - ins.i1);
                    break;
            }
        }
        return stack[0];
    }

    const std::string& source() const noexcept { return source_; }
    bool empty() const noexcept { return prog_.empty(); }

    // Largest lag referenced on any series, and whether the current-visit
    // treatment appears (callers use these to size histories).
    int max_series_lag() const noexcept { return max_series_lag_; }
    bool uses_treatment() const noexcept { return uses_treatment_; }

    static compiled_expr parse(const std::string& src, const expr_env& env);

private:
    std::vector<detail::instruction> prog_;
    std::string source_;
    int max_series_lag_ = 0;
    bool uses_treatment_ = false;

    friend class expr_parser;
};

class expr_parser {
public:
    expr_parser(const std::string& src, const expr_env& env)
        : tok_(src), env_(env), src_(src) {
        advance();
    }

    compiled_expr run() {
        compiled_expr e;
        e.source_ = src_;
        parse_additive(e);
        if (cur_.ty != detail::token::type::end)
            fail("unexpected trailing input '" + cur_.text + "'");
        int depth = 0, maxd = 0;
        for (const auto& ins : e.prog_) {
            depth += stack_delta(ins.op);
            maxd = std::max(maxd, depth);
        }
        if (maxd > 64) fail("expression is too deeply nested");
        // Fusion never deepens the stack, so the depth check above remains a
        // valid bound for the rewritten program.
        detail::peephole(e.prog_);
        return e;
    }

private:
    detail::tokenizer tok_;
    detail::token cur_;
    const expr_env& env_;
    const std::string& src_;

    static int stack_delta(detail::opcode op) {
        using detail::opcode;
        switch (op) {
            case opcode::push_const:
            case opcode::push_k:
            case opcode::push_x:
            case opcode::push_b:
            case opcode::push_series:
            case opcode::push_a:
            case opcode::ld_x_scaled:
            case opcode::ld_b_scaled:
            case opcode::ld_series_scaled:
            case opcode::ld_a_scaled: return 1;
            case opcode::neg:
            case opcode::fn_exp:
            case opcode::fn_log:
            case opcode::fn_expit:
            case opcode::fn_logit_clamped:
            case opcode::fn_abs:
            case opcode::fn_sqrt: return 0;
            case opcode::add:
            case opcode::sub:
            case opcode::mul:
            case opcode::divide:
            case opcode::pow_op:
            case opcode::fn_min:
            case opcode::fn_max: return -1;
            default: return 0;  // acc_* adjust the top of the stack in place
        }
    }

    [[noreturn]] void fail(const std::string& msg) const {
        throw config_error(tok_.err_at(cur_.pos, msg));
    }

    void advance() { cur_ = tok_.next(); }

    bool accept_symbol(const char* s) {
        if (cur_.ty == detail::token::type::symbol && cur_.text == s) {
            advance();
            return true;
        }
        return false;
    }

    void expect_symbol(const char* s, const char* what) {
        if (!accept_symbol(s)) fail(std::string("expected '") + s + "' " + what);
    }

    void parse_additive(compiled_expr& e) {
        parse_multiplicative(e);
        for (;;) {
            if (accept_symbol("+")) {
                parse_multiplicative(e);
                e.prog_.push_back({detail::opcode::add});
            } else if (accept_symbol("-")) {
                parse_multiplicative(e);
                e.prog_.push_back({detail::opcode::sub});
            } else {
                return;
            }
        }
    }

    void parse_multiplicative(compiled_expr& e) {
        parse_unary(e);
        for (;;) {
            if (accept_symbol("*")) {
                parse_unary(e);
                e.prog_.push_back({detail::opcode::mul});
            } else if (accept_symbol("/")) {
                parse_unary(e);
                e.prog_.push_back({detail::opcode::divide});
            } else {
                return;
            }
        }
    }

    void parse_unary(compiled_expr& e) {
        if (accept_symbol("-")) {
            parse_unary(e);
            e.prog_.push_back({detail::opcode::neg});
            return;
        }
        parse_power(e);
    }

    void parse_power(compiled_expr& e) {
        parse_primary(e);
        if (accept_symbol("^")) {
            parse_unary(e);  // right-associative; exponent may carry a sign
            e.prog_.push_back({detail::opcode::pow_op});
        }
    }

    void parse_primary(compiled_expr& e) {
        using detail::opcode;
        if (cur_.ty == detail::token::type::number) {
            e.prog_.push_back({opcode::push_const, 0, 0, cur_.num});
            advance();
            return;
        }
        if (accept_symbol("(")) {
            parse_additive(e);
            expect_symbol(")", "to close parenthesis");
            return;
        }
        if (cur_.ty != detail::token::type::ident)
            fail("expected a value, got '" + cur_.text + "'");

        const std::string name = cur_.text;
        const int name_pos = cur_.pos;
        advance();

        if (name == "k") {
            e.prog_.push_back({opcode::push_k});
            return;
        }

        if (cur_.ty == detail::token::type::symbol && cur_.text == "(") {
            parse_call(e, name, name_pos);
            return;
        }

        auto it = env_.vars.find(name);
        if (it == env_.vars.end())
            throw config_error(tok_.err_at(name_pos, "unknown variable '" + name + "'"));
        const auto& ent = it->second;

        const bool indexed = cur_.ty == detail::token::type::symbol && cur_.text == "[";
        if (ent.kind == ref_kind::baseline_shared || ent.kind == ref_kind::baseline_clone) {
            if (indexed)
                throw config_error(tok_.err_at(
                    name_pos, "baseline variable '" + name + "' cannot be indexed"));
            e.prog_.push_back({ent.kind == ref_kind::baseline_shared ? opcode::push_x
                                                                     : opcode::push_b,
                               ent.slot});
            return;
        }

        // series / treatment: an index is mandatory.
        if (!indexed)
            throw config_error(tok_.err_at(
                name_pos,
                "'" + name + "' is time-varying; write " + name + "[k] or " + name +
                    "[k-<lag>]"));
        advance();  // consume '['
        if (!(cur_.ty == detail::token::type::ident && cur_.text == "k"))
            fail("index must be k or k-<lag>");
        advance();
        int lag = 0;
        if (accept_symbol("-")) {
            if (cur_.ty != detail::token::type::number || cur_.num != std::floor(cur_.num) ||
                cur_.num < 0 || cur_.num > 1e6)
                fail("lag must be a nonnegative integer");
            lag = static_cast<int>(cur_.num);
            advance();
        }
        expect_symbol("]", "to close index");
        if (lag < ent.min_lag) {
            if (ent.min_lag == 1)
                throw config_error(tok_.err_at(
                    name_pos, "'" + name +
                                  "' cannot be referenced at the current visit here; "
                                  "use a lag of at least 1"));
            throw config_error(tok_.err_at(name_pos, "'" + name + "' requires a lag of at least " +
                                                         std::to_string(ent.min_lag)));
        }
        if (ent.kind == ref_kind::series) {
            e.prog_.push_back({opcode::push_series, ent.slot, lag});
            e.max_series_lag_ = std::max(e.max_series_lag_, lag);
        } else {
            e.prog_.push_back({opcode::push_a, 0, lag});
            e.uses_treatment_ = true;
        }
    }

    void parse_call(compiled_expr& e, const std::string& name, int name_pos) {
        using detail::opcode;
        struct fn {
            const char* name;
            int arity;
            opcode op;
        };
        static const fn table[] = {
            {"exp", 1, opcode::fn_exp},     {"log", 1, opcode::fn_log},
            {"expit", 1, opcode::fn_expit}, {"logit", 1, opcode::fn_logit_clamped},
            {"abs", 1, opcode::fn_abs},     {"sqrt", 1, opcode::fn_sqrt},
            {"min", 2, opcode::fn_min},     {"max", 2, opcode::fn_max},
            {"pow", 2, opcode::pow_op},
        };
        const fn* found = nullptr;
        for (const auto& f : table)
            if (name == f.name) {
                found = &f;
                break;
            }
        if (!found)
            throw config_error(tok_.err_at(name_pos, "unknown function '" + name + "'"));
        expect_symbol("(", "after function name");
        for (int a = 0; a < found->arity; ++a) {
            if (a > 0) expect_symbol(",", "between function arguments");
            parse_additive(e);
        }
        if (cur_.ty == detail::token::type::symbol && cur_.text == ",")
            throw config_error(tok_.err_at(
                name_pos, std::string("'") + found->name + "' takes " +
                              std::to_string(found->arity) + " argument(s)"));
        expect_symbol(")", "to close function call");
        e.prog_.push_back({found->op});
    }
};

inline compiled_expr compiled_expr::parse(const std::string& src, const expr_env& env) {
    if (src.find_first_not_of(" \t\r\n") == std::string::npos)
        throw config_error("empty expression");
    return expr_parser(src, env).run();
}

} // namespace msmsim
