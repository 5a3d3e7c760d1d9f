//! Exact calculus on exponential polynomials, i.e. finite sums of
//! `coef * t^power * exp(rate * t)`.
//!
//! This family is closed under linear combination, integration from zero and
//! solution of scalar linear ODEs `x' = F x + g(t)`, which is all the moment
//! recursion of the model needs. Resonant forcing (a rate coinciding with `F`)
//! produces a power-incremented term instead of a division by zero.
//!
//! Coefficients are stored in compensated double-word form. Near-resonant
//! solves (two rates separated by a small gap `d`) produce pairs of huge
//! `1/d`-scale coefficients that cancel analytically; chaining several solves
//! routes the two halves of such a pair through different divisions, so in
//! plain f64 their recombination carries `eps * |coef|` noise that can swamp
//! small transient moments. Double-word arithmetic pushes that noise to
//! `eps^2 * |coef|`, far below every tolerance in the crate.

/// Rates closer than this (in 1/yr) are treated as coincident.
pub const RESONANCE_TOL: f64 = 1e-12;

/// Terms with |coef| below this are dropped during normalization.
const DROP_EPS: f64 = 1e-300;

/// Relative tolerance used to cluster rates that differ only by round-off.
const RATE_MERGE_REL: f64 = 1e-9;

/// One `coef * t^power * exp(rate * t)` term, the public (f64) view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub power: u32,
    /// In 1/yr.
    pub rate: f64,
}

/// Double-word value `hi + lo` with `|lo| <= ulp(hi)/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Coef {
    hi: f64,
    lo: f64,
}

/// Error-free sum: `a + b = s + e` exactly.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

/// Renormalization step; requires `|a| >= |b|` or a = 0.
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

impl Coef {
    const ZERO: Coef = Coef { hi: 0.0, lo: 0.0 };

    fn from_f64(x: f64) -> Coef {
        Coef { hi: x, lo: 0.0 }
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }

    fn add(self, o: Coef) -> Coef {
        let (s, e) = two_sum(self.hi, o.hi);
        let e = e + self.lo + o.lo;
        let (hi, lo) = quick_two_sum(s, e);
        Coef { hi, lo }
    }

    fn mul_f64(self, b: f64) -> Coef {
        let p = self.hi * b;
        let e = f64::mul_add(self.hi, b, -p) + self.lo * b;
        let (hi, lo) = quick_two_sum(p, e);
        Coef { hi, lo }
    }

    fn div_f64(self, b: f64) -> Coef {
        let q1 = self.value() / b;
        // Exact remainder of the leading division via fused multiply-add.
        let r = f64::mul_add(-q1, b, self.hi) + self.lo;
        let q2 = r / b;
        let (hi, lo) = quick_two_sum(q1, q2);
        Coef { hi, lo }
    }

    fn mul(self, o: Coef) -> Coef {
        let p = self.hi * o.hi;
        let e = f64::mul_add(self.hi, o.hi, -p) + self.hi * o.lo + self.lo * o.hi;
        let (hi, lo) = quick_two_sum(p, e);
        Coef { hi, lo }
    }

    fn neg(self) -> Coef {
        Coef { hi: -self.hi, lo: -self.lo }
    }
}

/// Error-free product `a * b` as a double-word value.
fn two_prod(a: f64, b: f64) -> Coef {
    let p = a * b;
    Coef { hi: p, lo: f64::mul_add(a, b, -p) }
}

/// `expm1` of a double-word argument. For small arguments the Taylor series
/// is summed in double-word precision; the huge near-resonant coefficients
/// multiply this factor, so an eps-relative error here would be amplified to
/// eps times the coefficient magnitude.
fn expm1_dw(x: Coef) -> Coef {
    if x.hi.abs() > 0.9 {
        return Coef::from_f64(f64::exp_m1(x.value()));
    }
    let mut term = x;
    let mut sum = x;
    for k in 2..32u32 {
        term = term.mul(x).div_f64(k as f64);
        sum = sum.add(term);
        if term.hi.abs() < 1e-34 * sum.hi.abs().max(1e-300) {
            break;
        }
    }
    sum
}

/// Internal term with a compensated coefficient.
#[derive(Clone, Copy, Debug, PartialEq)]
struct CTerm {
    coef: Coef,
    power: u32,
    rate: f64,
}

/// A finite sum of exponential-polynomial terms, kept in canonical form:
/// terms sorted by (rate, power), no two terms sharing a (power, rate) pair.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExpPoly {
    terms: Vec<CTerm>,
}

impl ExpPoly {
    pub fn new(terms: Vec<Term>) -> Self {
        ExpPoly::from_cterms(
            terms
                .into_iter()
                .map(|t| CTerm { coef: Coef::from_f64(t.coef), power: t.power, rate: t.rate })
                .collect(),
        )
    }

    fn from_cterms(terms: Vec<CTerm>) -> Self {
        let mut p = ExpPoly { terms };
        p.normalize();
        p
    }

    pub fn zero() -> Self {
        ExpPoly { terms: Vec::new() }
    }

    pub fn constant(value: f64) -> Self {
        ExpPoly::term(value, 0, 0.0)
    }

    /// A single `coef * t^power * exp(rate t)` term.
    pub fn term(coef: f64, power: u32, rate: f64) -> Self {
        ExpPoly::new(vec![Term { coef, power, rate }])
    }

    /// The terms, rounded to the public f64 view.
    pub fn terms(&self) -> Vec<Term> {
        self.terms
            .iter()
            .map(|t| Term { coef: t.coef.value(), power: t.power, rate: t.rate })
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Evaluates the sum at `t` (years).
    pub fn eval(&self, t: f64) -> f64 {
        self.eval_clustered(t, false)
    }

    /// `eval(t) - eval(0)`, computed stably. `eval(0)` is the sum of the
    /// power-zero coefficients, so the difference can be formed with
    /// `exp_m1`, avoiding the catastrophic cancellation that a naive
    /// `eval(t) - eval(0)` suffers when the polynomial is small near zero
    /// (e.g. transient X-moments at short horizons, where the constant terms
    /// cancel the exponential ones to many digits).
    pub fn eval_increment(&self, t: f64) -> f64 {
        self.eval_clustered(t, true)
    }

    /// Shared evaluation core. Terms whose rates are close on the scale of
    /// `1/t` are grouped, and within a group anchored at rate `r0` the exact
    /// identity `e^{rt} = e^{r0 t} (1 + expm1((r - r0) t))` lets the
    /// near-cancelling coefficients be summed (in double-word precision)
    /// before any exponential is applied:
    /// `sum coef t^m e^{rt} = e^{r0 t} [sum coef t^m + sum coef t^m expm1((r-r0)t)]`.
    /// The grouping is algebraically exact, so the cluster cut-off only
    /// affects conditioning, never correctness.
    fn eval_clustered(&self, t: f64, increment: bool) -> f64 {
        let mut total = 0.0;
        let mut i = 0;
        while i < self.terms.len() {
            // Grow the cluster while consecutive rate gaps satisfy
            // |dr * t| <= 0.1 (terms are sorted by rate).
            let mut j = i + 1;
            while j < self.terms.len()
                && (self.terms[j].rate - self.terms[j - 1].rate).abs() * t.abs() <= 0.1
            {
                j += 1;
            }
            let cluster = &self.terms[i..j];
            // Anchor on the largest coefficient: the huge cancelling pairs
            // then enter the correction sum only through small expm1 factors.
            let r0 = cluster
                .iter()
                .max_by(|x, y| x.coef.hi.abs().total_cmp(&y.coef.hi.abs()))
                .map(|term| term.rate)
                .unwrap();
            let mut const0 = Coef::ZERO; // sum of power-zero coefficients
            let mut main_pos = Coef::ZERO; // sum coef t^m over power > 0
            let mut corr = Coef::ZERO; // sum coef t^m expm1((r - r0) t)
            for term in cluster {
                let tm = t.powi(term.power as i32);
                if term.power == 0 {
                    const0 = const0.add(term.coef);
                } else {
                    main_pos = main_pos.add(term.coef.mul_f64(tm));
                }
                if term.rate != r0 {
                    let x = two_prod(term.rate - r0, t);
                    corr = corr.add(term.coef.mul(expm1_dw(x)).mul_f64(tm));
                }
            }
            let e0 = (r0 * t).exp();
            total += if increment {
                const0.value() * f64::exp_m1(r0 * t) + e0 * main_pos.add(corr).value()
            } else {
                e0 * const0.add(main_pos).add(corr).value()
            };
            i = j;
        }
        total
    }

    /// Returns `alpha * self + beta * other` with like terms merged.
    pub fn combine(&self, other: &ExpPoly, alpha: f64, beta: f64) -> ExpPoly {
        let mut terms = Vec::with_capacity(self.terms.len() + other.terms.len());
        terms.extend(self.terms.iter().map(|t| CTerm { coef: t.coef.mul_f64(alpha), ..*t }));
        terms.extend(other.terms.iter().map(|t| CTerm { coef: t.coef.mul_f64(beta), ..*t }));
        ExpPoly::from_cterms(terms)
    }

    pub fn scale(&self, alpha: f64) -> ExpPoly {
        ExpPoly::from_cterms(
            self.terms.iter().map(|t| CTerm { coef: t.coef.mul_f64(alpha), ..*t }).collect(),
        )
    }

    /// Antiderivative `P` with `P(0) = 0`, exact.
    pub fn integrate(&self) -> ExpPoly {
        solve_linear_ode(0.0, self, 0.0)
    }

    /// Derivative, exact. Used mainly by tests and residual checks.
    pub fn differentiate(&self) -> ExpPoly {
        let mut out = Vec::with_capacity(2 * self.terms.len());
        for t in &self.terms {
            if t.power > 0 {
                out.push(CTerm {
                    coef: t.coef.mul_f64(t.power as f64),
                    power: t.power - 1,
                    rate: t.rate,
                });
            }
            if t.rate != 0.0 {
                out.push(CTerm { coef: t.coef.mul_f64(t.rate), power: t.power, rate: t.rate });
            }
        }
        ExpPoly::from_cterms(out)
    }

    fn normalize(&mut self) {
        self.terms.retain(|t| {
            let v = t.coef.value();
            v.abs() >= DROP_EPS && v.is_finite()
        });
        if self.terms.is_empty() {
            return;
        }
        // Cluster rates that differ only by round-off so like terms merge.
        self.terms.sort_by(|x, y| x.rate.total_cmp(&y.rate));
        let mut anchor = self.terms[0].rate;
        for t in self.terms.iter_mut() {
            let tol = RATE_MERGE_REL * anchor.abs().max(1.0);
            if (t.rate - anchor).abs() <= tol {
                t.rate = anchor;
            } else {
                anchor = t.rate;
            }
        }
        self.terms
            .sort_by(|x, y| x.rate.total_cmp(&y.rate).then(x.power.cmp(&y.power)));
        let mut merged: Vec<CTerm> = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            match merged.last_mut() {
                Some(last) if last.rate == t.rate && last.power == t.power => {
                    last.coef = last.coef.add(t.coef);
                }
                _ => merged.push(*t),
            }
        }
        merged.retain(|t| t.coef.value().abs() >= DROP_EPS);
        self.terms = merged;
    }
}

/// Exact closed-form solution of `x'(t) = f_rate * x + g(t)`, `x(0) = x0`:
/// `x(t) = e^{Ft} x0 + e^{Ft} \int_0^t e^{-Fs} g(s) ds`.
///
/// Forcing terms whose rate is within [`RESONANCE_TOL`] of `f_rate` yield a
/// power-incremented term at rate `f_rate`.
pub fn solve_linear_ode(f_rate: f64, g: &ExpPoly, x0: f64) -> ExpPoly {
    let mut out: Vec<CTerm> = Vec::new();
    if x0 != 0.0 {
        out.push(CTerm { coef: Coef::from_f64(x0), power: 0, rate: f_rate });
    }
    for term in &g.terms {
        let m = term.power;
        let shifted = term.rate - f_rate;
        if shifted.abs() <= RESONANCE_TOL {
            // Resonant: integrating C s^m in the shifted frame gives t^{m+1}/(m+1).
            out.push(CTerm {
                coef: term.coef.div_f64((m + 1) as f64),
                power: m + 1,
                rate: f_rate,
            });
        } else {
            // \int t^m e^{rt} dt = e^{rt} \sum_{i=0}^m (-1)^i m!/(m-i)! t^{m-i} / r^{i+1},
            // evaluated in the shifted frame; the exponential picks the original
            // rate back up exactly after multiplying by e^{Ft}. Iteratively:
            // coef_0 = coef/r, coef_i = -coef_{i-1} (m-i+1)/r.
            let mut cur = term.coef.div_f64(shifted);
            let mut boundary = cur;
            for i in 0..=m {
                if i > 0 {
                    cur = cur.mul_f64(-((m - i + 1) as f64)).div_f64(shifted);
                }
                out.push(CTerm { coef: cur, power: m - i, rate: term.rate });
                if i == m {
                    boundary = cur;
                }
            }
            out.push(CTerm { coef: boundary.neg(), power: 0, rate: f_rate });
        }
    }
    ExpPoly::from_cterms(out)
}
