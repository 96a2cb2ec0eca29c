//! Scalar maximal monotone graphs and the convex analysis around them.
//!
//! A [`MonotoneGraph`] is the maximal monotone extension of an increasing
//! function `g₀ : ℝ → ℝ` with finitely many declared jumps: away from the
//! jumps `f(x) = {g₀(x)}`, at a jump `f(x) = [g₀(x−), g₀(x+)]`. The graph is
//! the subdifferential of its potential `F` (a [`ConvexPotential`] with
//! `F(0) = 0`), and its resolvent `J_λ = (I + λf)⁻¹` is the proximal map of
//! `λF`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type IntervalFn = Arc<dyn Fn(f64) -> Interval + Send + Sync>;

/// Absolute tolerance of the generic resolvent bisection.
pub const RESOLVENT_TOL: f64 = 1e-12;
/// Relative bracket tolerance of the golden-section search in [`conjugate`].
pub const CONJUGATE_TOL: f64 = 1e-10;
/// Target accuracy of the adaptive Simpson rule in [`potential_from_graph`].
pub const QUADRATURE_TOL: f64 = 1e-10;

/// Closed interval `[lo, hi]`; a singleton when `lo == hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "empty interval [{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    /// Distance from `y` to the interval (0 inside).
    pub fn distance(&self, y: f64) -> f64 {
        if y < self.lo {
            self.lo - y
        } else if y > self.hi {
            y - self.hi
        } else {
            0.0
        }
    }

    pub fn contains(&self, y: f64, tol: f64) -> bool {
        self.distance(y) <= tol
    }

    /// Point of the interval nearest to `y`.
    pub fn clamp(&self, y: f64) -> f64 {
        y.clamp(self.lo, self.hi)
    }

    /// Element of least modulus.
    pub fn least_modulus(&self) -> f64 {
        self.clamp(0.0)
    }

    pub fn scale(&self, c: f64) -> Self {
        if c >= 0.0 {
            Self::new(c * self.lo, c * self.hi)
        } else {
            Self::new(c * self.hi, c * self.lo)
        }
    }
}

/// A declared discontinuity of the underlying increasing function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub at: f64,
    pub left: f64,
    pub right: f64,
}

#[derive(Clone)]
enum Shape {
    /// `x ↦ a·sgn(x) + c·|x|^r·sgn(x)`, with `a, c ≥ 0`, `r > 0`.
    SignPower { jump: f64, coeff: f64, exponent: f64 },
    /// Arbitrary increasing base function with declared jumps.
    Increasing(ScalarFn),
    /// `inner ∘ φ_q⁻¹`.
    Reparametrized { inner: Arc<MonotoneGraph>, q: f64 },
}

/// Maximal monotone graph on ℝ with full domain.
#[derive(Clone)]
pub struct MonotoneGraph {
    name: String,
    shape: Shape,
    jumps: Vec<Jump>,
    growth_exponent: f64,
    growth_constant: f64,
    working_range: f64,
}

impl fmt::Debug for MonotoneGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MonotoneGraph")
            .field("name", &self.name)
            .field("jumps", &self.jumps)
            .field("growth_exponent", &self.growth_exponent)
            .field("growth_constant", &self.growth_constant)
            .finish()
    }
}

#[inline]
fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `φ_q(x) = x|x|^{q−2}`.
pub fn phi_q(q: f64, x: f64) -> f64 {
    if q == 2.0 {
        x
    } else {
        x * x.abs().powf(q - 2.0)
    }
}

/// Inverse of [`phi_q`]: `y|y|^{(2−q)/(q−1)}`.
pub fn phi_q_inverse(q: f64, y: f64) -> f64 {
    if q == 2.0 {
        y
    } else {
        sgn(y) * y.abs().powf(1.0 / (q - 1.0))
    }
}

/// `φ_q'(x) = (q−1)|x|^{q−2}`.
pub fn phi_q_derivative(q: f64, x: f64) -> f64 {
    if q == 2.0 {
        1.0
    } else {
        (q - 1.0) * x.abs().powf(q - 2.0)
    }
}

/// Positive root of `y + λ c y^r = a` for `a > 0`, by Newton's method
/// safeguarded with bisection.
fn power_root(lambda_c: f64, r: f64, a: f64) -> f64 {
    if r == 1.0 {
        return a / (1.0 + lambda_c);
    }
    let phi = |y: f64| y + lambda_c * y.powf(r) - a;
    let mut lo = 0.0_f64;
    let mut hi = a.min((a / lambda_c).powf(1.0 / r));
    if phi(hi) <= 0.0 {
        return hi;
    }
    let mut y = hi;
    for _ in 0..200 {
        let val = phi(y);
        if val == 0.0 {
            return y;
        }
        if val > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        let deriv = 1.0 + lambda_c * r * y.powf(r - 1.0);
        let mut next = y - val / deriv;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - y).abs() <= 4.0 * f64::EPSILON * y.abs().max(f64::MIN_POSITIVE) || hi - lo <= 0.0 {
            return next;
        }
        y = next;
    }
    y
}

/// One-sided limit of `g` at `x` from the side `dir = ±1`, by linear
/// extrapolation of two nearby samples.
fn one_sided_limit(g: &dyn Fn(f64) -> f64, x: f64, dir: f64) -> f64 {
    let delta = 1e-7 * (1.0 + x.abs());
    let far = g(x + dir * delta);
    let near = g(x + dir * 0.5 * delta);
    2.0 * near - far
}

impl MonotoneGraph {
    fn sign_power(name: impl Into<String>, jump: f64, coeff: f64, exponent: f64) -> Self {
        let mut jumps = Vec::new();
        if jump > 0.0 {
            jumps.push(Jump { at: 0.0, left: -jump, right: jump });
        }
        let growth_exponent = exponent.max(1.0);
        // |a sgn + c|x|^r| ≤ a + c|x|^r ≤ (a + c)(1 + |x|^d) when r ≤ d.
        let growth_constant = (jump + coeff).max(f64::MIN_POSITIVE);
        Self {
            name: name.into(),
            shape: Shape::SignPower { jump, coeff, exponent },
            jumps,
            growth_exponent,
            growth_constant,
            working_range: f64::INFINITY,
        }
    }

    /// `f ≡ 0`.
    pub fn zero() -> Self {
        Self::sign_power("zero", 0.0, 0.0, 1.0)
    }

    /// `f(x) = x`.
    pub fn identity() -> Self {
        Self::sign_power("identity", 0.0, 1.0, 1.0)
    }

    /// Maximal extension of `sgn`, with `f(0) = [−1, 1]`.
    pub fn sign() -> Self {
        Self::sign_power("sign", 1.0, 0.0, 1.0)
    }

    /// `f(x) = |x|^{d−1}x`, `d ≥ 1`.
    pub fn signed_power(d: f64) -> Result<Self> {
        if !(d >= 1.0) || !d.is_finite() {
            return Err(Error::InvalidParameter(format!("signed_power exponent must be ≥ 1, got {d}")));
        }
        Ok(Self::sign_power(format!("signed_power:{d}"), 0.0, 1.0, d))
    }

    /// `f(x) = sgn(x) + |x|^{d−1}x`, with the jump at 0 filled in.
    pub fn step_plus_power(d: f64) -> Result<Self> {
        if !(d >= 1.0) || !d.is_finite() {
            return Err(Error::InvalidParameter(format!("step_plus_power exponent must be ≥ 1, got {d}")));
        }
        Ok(Self::sign_power(format!("step_plus_power:{d}"), 1.0, 1.0, d))
    }

    /// `f(x) = x^d` for an odd integer `d ≥ 1`.
    pub fn power(d: f64) -> Result<Self> {
        if d < 1.0 || d.fract() != 0.0 || (d as i64) % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "power:<d> needs an odd integer d ≥ 1 to be increasing, got {d}"
            )));
        }
        Ok(Self::sign_power(format!("power:{d}"), 0.0, 1.0, d))
    }

    /// Looks up a built-in graph: `zero`, `identity`, `sign`, `power:<d>`,
    /// `signed_power:<d>`, `step_plus_power:<d>`.
    pub fn from_name(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let (kind, param) = match spec.split_once(':') {
            Some((k, p)) => (k.trim(), Some(p.trim())),
            None => (spec, None),
        };
        let exponent = || -> Result<f64> {
            let p = param.ok_or_else(|| Error::InvalidParameter(format!("graph `{spec}` needs an exponent")))?;
            p.parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("bad exponent `{p}` in graph `{spec}`")))
        };
        match kind {
            "zero" => Ok(Self::zero()),
            "identity" => Ok(Self::identity()),
            "sign" => Ok(Self::sign()),
            "power" => Self::power(exponent()?),
            "signed_power" => Self::signed_power(exponent()?),
            "step_plus_power" => Self::step_plus_power(exponent()?),
            _ => Err(Error::InvalidParameter(format!("unknown graph `{spec}`"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn growth_exponent(&self) -> f64 {
        self.growth_exponent
    }

    pub fn growth_constant(&self) -> f64 {
        self.growth_constant
    }

    /// Range on which a user-supplied base function was validated
    /// (infinite for built-ins).
    pub fn working_range(&self) -> f64 {
        self.working_range
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    /// Lipschitz constant when the graph is a single-valued linear map
    /// (`None` otherwise).
    fn linear_slope(&self) -> Option<f64> {
        match self.shape {
            Shape::SignPower { jump, coeff, exponent } if jump == 0.0 && exponent == 1.0 => Some(coeff),
            _ => None,
        }
    }

    /// Value of the underlying increasing function (the single element of
    /// `f(x)` away from jumps).
    pub fn base_value(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::SignPower { jump, coeff, exponent } => {
                let s = sgn(x);
                let power = if *exponent == 1.0 { x.abs() } else { x.abs().powf(*exponent) };
                s * (jump + coeff * power)
            }
            Shape::Increasing(g) => g(x),
            Shape::Reparametrized { inner, q } => inner.base_value(phi_q_inverse(*q, x)),
        }
    }

    /// Base value on the segment `[a, b]`, with one-sided limits at
    /// endpoints that are jumps.
    fn segment_value(&self, r: f64, a: f64, b: f64) -> f64 {
        if r == a {
            if let Some(j) = self.jump_at(a) {
                return j.right;
            }
        }
        if r == b {
            if let Some(j) = self.jump_at(b) {
                return j.left;
            }
        }
        self.base_value(r)
    }

    fn jump_at(&self, x: f64) -> Option<&Jump> {
        self.jumps.iter().find(|j| j.at == x)
    }

    /// `f(x) = [f(x−), f(x+)]`.
    pub fn eval_interval(&self, x: f64) -> Interval {
        match self.jump_at(x) {
            Some(j) => Interval::new(j.left, j.right),
            None => Interval::point(self.base_value(x)),
        }
    }

    /// Element of `f(x)` of least absolute value.
    pub fn minimal_section(&self, x: f64) -> f64 {
        self.eval_interval(x).least_modulus()
    }

    /// `C_f (1 + |x|^d)`.
    pub fn growth_bound(&self, x: f64) -> f64 {
        self.growth_constant * (1.0 + x.abs().powf(self.growth_exponent))
    }

    /// Resolvent `J_λ x = (I + λf)⁻¹ x`: the unique `y` with `x ∈ y + λf(y)`.
    pub fn resolvent(&self, lambda: f64, x: f64) -> Result<f64> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("resolvent needs λ > 0, got {lambda}")));
        }
        if !x.is_finite() {
            return Err(Error::InvalidParameter(format!("resolvent argument {x} is not finite")));
        }
        match self.shape {
            Shape::SignPower { jump, coeff, exponent } => {
                let shifted = x.abs() - lambda * jump;
                if shifted <= 0.0 {
                    return Ok(0.0);
                }
                let y = if coeff == 0.0 { shifted } else { power_root(lambda * coeff, exponent, shifted) };
                Ok(sgn(x) * y)
            }
            _ => self.resolvent_bisection(lambda, x),
        }
    }

    fn resolvent_bisection(&self, lambda: f64, x: f64) -> Result<f64> {
        for j in &self.jumps {
            if j.at + lambda * j.left <= x && x <= j.at + lambda * j.right {
                return Ok(j.at);
            }
        }
        // Property (c) gives |x − J_λx| ≤ λ|f°(x)| ≤ λ C_f (1 + |x|^d).
        let mut width = lambda * self.growth_bound(x) + 1.0;
        let below = |y: f64| y + lambda * self.eval_interval(y).hi < x;
        let above = |y: f64| y + lambda * self.eval_interval(y).lo > x;
        let mut tries = 0;
        while !(below(x - width) && above(x + width)) {
            width *= 2.0;
            tries += 1;
            if tries > 60 || !width.is_finite() {
                return Err(Error::BracketNotFound { x, lambda });
            }
        }
        let (mut lo, mut hi) = (x - width, x + width);
        let tol = RESOLVENT_TOL.max(4.0 * f64::EPSILON * x.abs());
        for _ in 0..400 {
            if hi - lo <= tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if below(mid) {
                lo = mid;
            } else if above(mid) {
                hi = mid;
            } else {
                return Ok(mid);
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Yosida approximation `f_λ(x) = (x − J_λx)/λ`, evaluated as the
    /// element of `f(J_λx)` it equals.
    pub fn yosida(&self, lambda: f64, x: f64) -> Result<f64> {
        if let Some(c) = self.linear_slope() {
            if lambda > 0.0 {
                return Ok(c * x / (1.0 + lambda * c));
            }
        }
        let y = self.resolvent(lambda, x)?;
        let at = self.eval_interval(y);
        if at.is_point() {
            Ok(at.lo)
        } else {
            Ok(at.clamp((x - y) / lambda))
        }
    }

    /// Checks monotonicity, maximality and growth on `samples` points
    /// spread over `[-range, range]` plus every jump. Returns the first
    /// violation.
    pub fn check_invariants(&self, range: f64, samples: usize) -> Result<()> {
        let mut xs: Vec<f64> = (0..samples)
            .map(|i| -range + 2.0 * range * i as f64 / (samples.max(2) - 1) as f64)
            .collect();
        for j in &self.jumps {
            xs.extend([j.at - 1e-9, j.at, j.at + 1e-9]);
        }
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        for w in xs.windows(2) {
            let (a, b) = (self.eval_interval(w[0]), self.eval_interval(w[1]));
            if a.hi > b.lo + 1e-12 * (1.0 + a.hi.abs()) {
                return Err(Error::NonMonotone { x1: w[0], y1: a.hi, x2: w[1], y2: b.lo });
            }
        }
        for &x in &xs {
            let m = self.minimal_section(x).abs();
            if m > self.growth_bound(x) * (1.0 + 1e-12) {
                return Err(Error::InvalidParameter(format!(
                    "growth bound violated at x = {x}: |f°(x)| = {m} > {}",
                    self.growth_bound(x)
                )));
            }
        }
        Ok(())
    }
}

/// Maximal monotone extension of an increasing function `g0` with the given
/// jump points.
///
/// `working_range` bounds the sampling used to reject non-monotone input and
/// to fit the growth constant for the declared exponent `d`.
pub fn extend_increasing(
    name: impl Into<String>,
    g0: ScalarFn,
    jump_points: &[f64],
    growth_exponent: f64,
    working_range: f64,
) -> Result<MonotoneGraph> {
    if !(growth_exponent >= 1.0) {
        return Err(Error::InvalidParameter(format!("growth exponent must be ≥ 1, got {growth_exponent}")));
    }
    let mut points = jump_points.to_vec();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let jumps: Vec<Jump> = points
        .iter()
        .map(|&at| Jump { at, left: one_sided_limit(&*g0, at, -1.0), right: one_sided_limit(&*g0, at, 1.0) })
        .collect();
    for j in &jumps {
        if j.left > j.right {
            return Err(Error::NonMonotone { x1: j.at, y1: j.left, x2: j.at, y2: j.right });
        }
    }

    let samples = 4001;
    let mut xs: Vec<f64> = (0..samples)
        .map(|i| -working_range + 2.0 * working_range * i as f64 / (samples - 1) as f64)
        .filter(|x| !points.contains(x))
        .collect();
    for &p in &points {
        xs.extend([p - 1e-6, p + 1e-6]);
    }
    xs.sort_by(f64::total_cmp);
    let mut prev: Option<(f64, f64)> = None;
    let mut growth_constant = f64::MIN_POSITIVE;
    for &x in &xs {
        let y = g0(x);
        if !y.is_finite() {
            return Err(Error::InvalidParameter(format!("g0({x}) is not finite")));
        }
        if let Some((px, py)) = prev {
            if py > y + 1e-12 * (1.0 + py.abs()) {
                return Err(Error::NonMonotone { x1: px, y1: py, x2: x, y2: y });
            }
        }
        prev = Some((x, y));
        growth_constant = growth_constant.max(y.abs() / (1.0 + x.abs().powf(growth_exponent)));
    }
    for j in &jumps {
        let b = 1.0 + j.at.abs().powf(growth_exponent);
        growth_constant = growth_constant.max(j.left.abs() / b).max(j.right.abs() / b);
    }

    Ok(MonotoneGraph {
        name: name.into(),
        shape: Shape::Increasing(g0),
        jumps,
        growth_exponent,
        growth_constant,
        working_range,
    })
}

/// Convex function with `F(0) = 0`, together with its subdifferential.
#[derive(Clone)]
pub struct ConvexPotential {
    value: ScalarFn,
    subgradient: IntervalFn,
    conjugate_closed_form: Option<ScalarFn>,
}

impl fmt::Debug for ConvexPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvexPotential")
            .field("closed_form_conjugate", &self.conjugate_closed_form.is_some())
            .finish()
    }
}

impl ConvexPotential {
    pub fn new(value: ScalarFn, subgradient: IntervalFn) -> Self {
        Self { value, subgradient, conjugate_closed_form: None }
    }

    /// Attaches a closed-form conjugate used by [`ConvexPotential::conjugate_value`].
    /// Return `f64::INFINITY` outside the effective domain.
    pub fn with_conjugate(mut self, conjugate: ScalarFn) -> Self {
        self.conjugate_closed_form = Some(conjugate);
        self
    }

    pub fn value(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    pub fn subgradient(&self, x: f64) -> Interval {
        (self.subgradient)(x)
    }

    pub fn has_closed_form_conjugate(&self) -> bool {
        self.conjugate_closed_form.is_some()
    }

    /// `F*(y)`, from the closed form when available, else by [`conjugate`].
    pub fn conjugate_value(&self, y: f64) -> Result<f64> {
        match &self.conjugate_closed_form {
            Some(c) => {
                let v = c(y);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::ConjugateUnbounded { y })
                }
            }
            None => conjugate(self, y),
        }
    }

    /// `F*` as a potential in its own right (value `+∞` off its domain).
    /// The subdifferential is approximated by central differences.
    pub fn conjugate_potential(&self) -> ConvexPotential {
        let me = self.clone();
        let value: ScalarFn = Arc::new(move |y| me.conjugate_value(y).unwrap_or(f64::INFINITY));
        let v2 = value.clone();
        let subgradient: IntervalFn = Arc::new(move |y| {
            let h = 1e-6 * (1.0 + y.abs());
            let left = (v2(y) - v2(y - h)) / h;
            let right = (v2(y + h) - v2(y)) / h;
            if left <= right {
                Interval::new(left, right)
            } else {
                Interval::point(0.5 * (left + right))
            }
        });
        ConvexPotential::new(value, subgradient)
    }
}

/// `F(x) = a|x| + c|x|^{r+1}/(r+1)` and its conjugate.
fn sign_power_potential(graph: &MonotoneGraph, jump: f64, coeff: f64, exponent: f64) -> ConvexPotential {
    let value: ScalarFn = Arc::new(move |x: f64| {
        let ax = x.abs();
        jump * ax + coeff * ax.powf(exponent + 1.0) / (exponent + 1.0)
    });
    let conj: ScalarFn = Arc::new(move |y: f64| {
        let excess = y.abs() - jump;
        if excess <= 0.0 {
            0.0
        } else if coeff == 0.0 {
            f64::INFINITY
        } else {
            excess.powf((exponent + 1.0) / exponent) * coeff.powf(-1.0 / exponent) * exponent / (exponent + 1.0)
        }
    });
    let g = graph.clone();
    ConvexPotential::new(value, Arc::new(move |x| g.eval_interval(x))).with_conjugate(conj)
}

/// Adaptive Simpson quadrature; returns `(estimate, converged)`.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, bool) {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> (f64, bool) {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            return (left + right + delta / 15.0, true);
        }
        if depth == 0 {
            return (left + right + delta / 15.0, false);
        }
        let (l, lok) = recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1);
        let (r, rok) = recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
        (l + r, lok && rok)
    }
    if a == b {
        return (0.0, true);
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(fa, fm, fb, a, b);
    recurse(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// `∫₀ˣ s(r) dr` split at the jump points, with `s` the base function.
fn integrate_selection(graph: &MonotoneGraph, x: f64) -> (f64, bool) {
    if x == 0.0 {
        return (0.0, true);
    }
    let (lo, hi, sign) = if x > 0.0 { (0.0, x, 1.0) } else { (x, 0.0, -1.0) };
    let mut cuts = vec![lo];
    cuts.extend(graph.jumps.iter().map(|j| j.at).filter(|&p| p > lo && p < hi));
    cuts.push(hi);
    let mut total = 0.0;
    let mut ok = true;
    for w in cuts.windows(2) {
        let f = |r: f64| graph.segment_value(r, w[0], w[1]);
        let tol = QUADRATURE_TOL * (w[1] - w[0]).max(1e-3);
        let (v, conv) = adaptive_simpson(&f, w[0], w[1], tol);
        total += v;
        ok &= conv;
    }
    (sign * total, ok)
}

/// Potential `F(x) = ∫₀ˣ f°(r) dr` of a graph, so that `∂F = f`, `F(0) = 0`.
///
/// Built-in graphs use their analytic primitive; others are integrated by
/// adaptive Simpson between jump points.
pub fn potential_from_graph(graph: &MonotoneGraph) -> Result<ConvexPotential> {
    match &graph.shape {
        Shape::SignPower { jump, coeff, exponent } => Ok(sign_power_potential(graph, *jump, *coeff, *exponent)),
        Shape::Reparametrized { inner, q } => {
            let inner_hat = hat_potential(inner, *q)?;
            let q = *q;
            let g = graph.clone();
            Ok(ConvexPotential::new(
                Arc::new(move |v| inner_hat.value(phi_q_inverse(q, v))),
                Arc::new(move |v| g.eval_interval(v)),
            ))
        }
        Shape::Increasing(_) => {
            let reach = graph.working_range.min(10.0);
            for probe in [-reach, -0.1 * reach, 0.1 * reach, reach] {
                let (_, ok) = integrate_selection(graph, probe);
                if !ok {
                    let (a, b) = if probe < 0.0 { (probe, 0.0) } else { (0.0, probe) };
                    return Err(Error::QuadratureFailed { a, b });
                }
            }
            let g = graph.clone();
            let g2 = graph.clone();
            Ok(ConvexPotential::new(
                Arc::new(move |x| integrate_selection(&g, x).0),
                Arc::new(move |x| g2.eval_interval(x)),
            ))
        }
    }
}

/// `F̂ = F̃ ∘ φ_q`, the potential of `x ↦ f(x)φ_q'(x)`.
fn hat_potential(graph: &MonotoneGraph, q: f64) -> Result<ConvexPotential> {
    let g = graph.clone();
    let subgradient: IntervalFn = Arc::new(move |x| g.eval_interval(x).scale(phi_q_derivative(q, x)));
    match graph.shape {
        Shape::SignPower { jump, coeff, exponent } => {
            // ∫₀ˣ (a + c|s|^r)(q−1)|s|^{q−2} ds
            let value: ScalarFn = Arc::new(move |x: f64| {
                let ax = x.abs();
                jump * ax.powf(q - 1.0) + coeff * (q - 1.0) * ax.powf(exponent + q - 1.0) / (exponent + q - 1.0)
            });
            Ok(ConvexPotential::new(value, subgradient))
        }
        _ => {
            let g = graph.clone();
            let jumps: Vec<f64> = graph.jumps.iter().map(|j| j.at).collect();
            let value: ScalarFn = Arc::new(move |x: f64| {
                if x == 0.0 {
                    return 0.0;
                }
                let (lo, hi, s) = if x > 0.0 { (0.0, x, 1.0) } else { (x, 0.0, -1.0) };
                let mut cuts = vec![lo];
                cuts.extend(jumps.iter().copied().filter(|&p| p > lo && p < hi));
                cuts.push(hi);
                s * cuts
                    .windows(2)
                    .map(|w| {
                        let f = |r: f64| g.segment_value(r, w[0], w[1]) * phi_q_derivative(q, r);
                        adaptive_simpson(&f, w[0], w[1], QUADRATURE_TOL * (w[1] - w[0]).max(1e-3)).0
                    })
                    .sum::<f64>()
            });
            Ok(ConvexPotential::new(value, subgradient))
        }
    }
}

/// Legendre–Fenchel conjugate `F*(y) = sup_x (xy − F(x))`.
///
/// The bracket is doubled on each side until the concave objective stops
/// increasing, then refined by golden-section search.
pub fn conjugate(potential: &ConvexPotential, y: f64) -> Result<f64> {
    let objective = |x: f64| x * y - potential.value(x);
    let reach = |dir: f64| -> Result<f64> {
        let mut h = 1.0;
        let mut current = objective(dir * h);
        loop {
            let next = objective(dir * 2.0 * h);
            if !(next > current) {
                return Ok(2.0 * h);
            }
            h *= 2.0;
            current = next;
            if h > 1e15 {
                return Err(Error::ConjugateUnbounded { y });
            }
        }
    };
    let mut a = -reach(-1.0)?;
    let mut b = reach(1.0)?;
    let mut best = objective(0.0).max(objective(a)).max(objective(b));

    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    for _ in 0..300 {
        if b - a <= CONJUGATE_TOL * (1.0 + c.abs().max(d.abs())) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = objective(d);
        }
        best = best.max(fc).max(fd);
    }
    best = best.max(objective(0.5 * (a + b)));
    Ok(best)
}

/// The graphs and potentials obtained by reparametrizing `f` through `φ_q`.
#[derive(Debug, Clone)]
pub struct CompositeGraphs {
    /// `f̃ = f ∘ φ_q⁻¹`.
    pub f_tilde: MonotoneGraph,
    /// `F̃`, the normalized potential of `f̃`.
    pub potential_tilde: ConvexPotential,
    /// `F̃*`.
    pub conjugate_tilde: ConvexPotential,
    /// `F̂ = F̃ ∘ φ_q`.
    pub potential_hat: ConvexPotential,
    pub q: f64,
}

pub fn composite_graphs(graph: &MonotoneGraph, q: f64) -> Result<CompositeGraphs> {
    if !(q >= 2.0) {
        return Err(Error::InvalidParameter(format!("composite graphs need q ≥ 2, got {q}")));
    }
    if !graph.eval_interval(0.0).contains(0.0, 0.0) {
        return Err(Error::InvalidParameter(format!("composite graphs need 0 ∈ f(0) for graph {}", graph.name)));
    }
    let f_tilde = match graph.shape {
        Shape::SignPower { jump, coeff, exponent } => {
            let mut g = MonotoneGraph::sign_power(format!("{}∘φ_{q}⁻¹", graph.name), jump, coeff, exponent / (q - 1.0));
            // f̃ grows like |x|^{d/(q−1)}, but we keep the declared d ≥ 1 bound.
            g.growth_exponent = g.growth_exponent.max(1.0);
            g
        }
        _ => {
            let jumps = graph
                .jumps
                .iter()
                .map(|j| Jump { at: phi_q(q, j.at), left: j.left, right: j.right })
                .collect();
            MonotoneGraph {
                name: format!("{}∘φ_{q}⁻¹", graph.name),
                shape: Shape::Reparametrized { inner: Arc::new(graph.clone()), q },
                jumps,
                growth_exponent: graph.growth_exponent,
                growth_constant: graph.growth_constant,
                working_range: phi_q(q, graph.working_range.min(1e100)),
            }
        }
    };
    let potential_tilde = potential_from_graph(&f_tilde)?;
    let conjugate_tilde = potential_tilde.conjugate_potential();
    let potential_hat = hat_potential(graph, q)?;
    Ok(CompositeGraphs { f_tilde, potential_tilde, conjugate_tilde, potential_hat, q })
}

/// Outcome of [`check_symmetry`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetryReport {
    pub max_deviation: f64,
    pub worst_x: f64,
    pub symmetric: bool,
}

/// Largest `|F(x) − F(−x)|` over the sample grid.
pub fn check_symmetry(potential: &ConvexPotential, grid: &[f64], tol: f64) -> SymmetryReport {
    let mut report = SymmetryReport { max_deviation: 0.0, worst_x: 0.0, symmetric: true };
    for &x in grid {
        let dev = (potential.value(x) - potential.value(-x)).abs();
        if dev > report.max_deviation {
            report.max_deviation = dev;
            report.worst_x = x;
        }
    }
    report.symmetric = report.max_deviation <= tol;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn floor_graph() -> MonotoneGraph {
        extend_increasing("x+floor", Arc::new(|x: f64| x + x.floor()), &[0.0], 1.0, 0.9).unwrap()
    }

    #[test]
    fn extension_fills_jumps() {
        let cube = extend_increasing("cube", Arc::new(|x: f64| x * x * x), &[], 3.0, 5.0).unwrap();
        assert_eq!(cube.eval_interval(2.0), Interval::point(8.0));

        let s = extend_increasing("sgn", Arc::new(sgn), &[0.0], 1.0, 5.0).unwrap();
        let at0 = s.eval_interval(0.0);
        assert_abs_diff_eq!(at0.lo, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(at0.hi, 1.0, epsilon = 1e-12);

        let fl = floor_graph().eval_interval(0.0);
        assert_abs_diff_eq!(fl.lo, -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fl.hi, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn extension_rejects_decreasing_input() {
        let err = extend_increasing("neg", Arc::new(|x: f64| -x), &[], 1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::NonMonotone { .. }));
    }

    #[test]
    fn builtin_registry() {
        assert!(MonotoneGraph::from_name("power:3").is_ok());
        assert!(MonotoneGraph::from_name("power:2").is_err());
        assert!(MonotoneGraph::from_name("signed_power:2.5").is_ok());
        assert!(MonotoneGraph::from_name("step_plus_power:3").is_ok());
        assert!(MonotoneGraph::from_name("bogus").is_err());
        let sp = MonotoneGraph::from_name("step_plus_power:3").unwrap();
        assert_eq!(sp.eval_interval(0.0), Interval::new(-1.0, 1.0));
        assert_eq!(sp.base_value(2.0), 9.0);
    }

    #[test]
    fn resolvent_examples() {
        assert_abs_diff_eq!(MonotoneGraph::identity().resolvent(1.0, 2.0).unwrap(), 1.0, epsilon = 1e-15);
        let s = MonotoneGraph::sign();
        for (x, want) in [(1.0, 0.5), (0.3, 0.0), (-1.0, -0.5)] {
            assert_abs_diff_eq!(s.resolvent(0.5, x).unwrap(), want, epsilon = 1e-15);
        }
        let cube = MonotoneGraph::power(3.0).unwrap();
        assert_abs_diff_eq!(cube.resolvent(1.0, 2.0).unwrap(), 1.0, epsilon = 1e-14);
        assert!(s.resolvent(0.0, 1.0).is_err());
    }

    #[test]
    fn generic_resolvent_matches_closed_forms() {
        let cube_generic = extend_increasing("cube", Arc::new(|x: f64| x * x * x), &[], 3.0, 10.0).unwrap();
        let cube = MonotoneGraph::power(3.0).unwrap();
        let sgn_generic = extend_increasing("sgn", Arc::new(sgn), &[0.0], 1.0, 10.0).unwrap();
        let s = MonotoneGraph::sign();
        for &lambda in &[0.01, 0.3, 1.0, 4.0] {
            for i in -20..=20 {
                let x = i as f64 * 0.37;
                let a = cube_generic.resolvent(lambda, x).unwrap();
                let b = cube.resolvent(lambda, x).unwrap();
                assert_abs_diff_eq!(a, b, epsilon = 1e-11);
                let a = sgn_generic.resolvent(lambda, x).unwrap();
                let b = s.resolvent(lambda, x).unwrap();
                assert_abs_diff_eq!(a, b, epsilon = 1e-11);
            }
        }
        // A jump not containing 0.
        let fl = floor_graph();
        assert_eq!(fl.resolvent(0.5, -0.2).unwrap(), 0.0);
    }

    #[test]
    fn yosida_examples() {
        assert_abs_diff_eq!(MonotoneGraph::identity().yosida(1.0, 2.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(MonotoneGraph::sign().yosida(0.5, 0.3).unwrap(), 0.6, epsilon = 1e-15);
        for g in ["identity", "sign", "power:3", "step_plus_power:2"] {
            let g = MonotoneGraph::from_name(g).unwrap();
            assert_eq!(g.yosida(0.7, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn potential_examples() {
        let f = potential_from_graph(&MonotoneGraph::identity()).unwrap();
        assert_abs_diff_eq!(f.value(2.0), 2.0, epsilon = 1e-15);
        let f = potential_from_graph(&MonotoneGraph::sign()).unwrap();
        assert_abs_diff_eq!(f.value(-3.0), 3.0, epsilon = 1e-15);
        let f = potential_from_graph(&MonotoneGraph::power(3.0).unwrap()).unwrap();
        assert_abs_diff_eq!(f.value(2.0), 4.0, epsilon = 1e-14);
    }

    #[test]
    fn quadrature_potential_matches_primitive() {
        let g = extend_increasing("spp", Arc::new(|x: f64| sgn(x) + x * x * x), &[0.0], 3.0, 10.0).unwrap();
        let f = potential_from_graph(&g).unwrap();
        for &x in &[-2.5f64, -1.0, -0.1, 0.0, 0.4, 1.7, 3.0] {
            let exact = x.abs() + x.powi(4) / 4.0;
            assert_abs_diff_eq!(f.value(x), exact, epsilon = 1e-9);
        }
        let fl = potential_from_graph(&floor_graph()).unwrap();
        // ∫₀^{-0.5} (r − 1) dr = 0.125 + 0.5
        assert_abs_diff_eq!(fl.value(-0.5), 0.625, epsilon = 1e-9);
    }

    #[test]
    fn conjugate_examples() {
        let half_square = potential_from_graph(&MonotoneGraph::identity()).unwrap();
        assert_abs_diff_eq!(conjugate(&half_square, 3.0).unwrap(), 4.5, epsilon = 1e-9);

        let quartic = potential_from_graph(&MonotoneGraph::power(3.0).unwrap()).unwrap();
        let want = 0.75 * 2f64.powf(4.0 / 3.0);
        assert_abs_diff_eq!(conjugate(&quartic, 2.0).unwrap(), want, epsilon = 1e-9);
        assert_abs_diff_eq!(want, 1.8899, epsilon = 1e-4);

        let abs = potential_from_graph(&MonotoneGraph::sign()).unwrap();
        for y in [-1.0, -0.4, 0.0, 0.99, 1.0] {
            assert_abs_diff_eq!(conjugate(&abs, y).unwrap(), 0.0, epsilon = 1e-12);
        }
        assert!(matches!(conjugate(&abs, 1.5), Err(Error::ConjugateUnbounded { .. })));
    }

    #[test]
    fn closed_form_conjugates_agree_with_search() {
        for name in ["identity", "sign", "power:3", "signed_power:1.5", "step_plus_power:2"] {
            let f = potential_from_graph(&MonotoneGraph::from_name(name).unwrap()).unwrap();
            for i in -12..=12 {
                let y = i as f64 * 0.45;
                match (f.conjugate_value(y), conjugate(&f, y)) {
                    (Ok(a), Ok(b)) => assert_abs_diff_eq!(a, b, epsilon = 1e-8 * (1.0 + a.abs())),
                    (Err(_), Err(_)) => {}
                    (a, b) => panic!("{name} at {y}: {a:?} vs {b:?}"),
                }
            }
        }
    }

    #[test]
    fn phi_q_examples() {
        assert_eq!(phi_q(2.0, -1.7), -1.7);
        assert_abs_diff_eq!(phi_q(4.0, 2.0), 8.0, epsilon = 1e-14);
        assert_abs_diff_eq!(phi_q_inverse(4.0, 8.0), 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(phi_q(3.0, -2.0), -4.0, epsilon = 1e-14);
        for &q in &[2.0, 2.5, 3.0, 4.0, 6.0] {
            for &x in &[-3.0, -0.2, 0.0, 0.7, 5.0] {
                assert_abs_diff_eq!(phi_q(q, phi_q_inverse(q, x)), x, epsilon = 1e-12 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn composite_examples() {
        let c = composite_graphs(&MonotoneGraph::identity(), 2.0).unwrap();
        assert_abs_diff_eq!(c.f_tilde.base_value(1.3), 1.3, epsilon = 1e-15);
        assert_abs_diff_eq!(c.potential_hat.value(3.0), 4.5, epsilon = 1e-14);

        let c = composite_graphs(&MonotoneGraph::power(3.0).unwrap(), 2.0).unwrap();
        assert_abs_diff_eq!(c.potential_hat.value(2.0), 4.0, epsilon = 1e-13);
        assert_abs_diff_eq!(c.conjugate_tilde.value(8.0), 12.0, epsilon = 1e-9);

        let c = composite_graphs(&MonotoneGraph::sign(), 4.0).unwrap();
        assert_abs_diff_eq!(c.potential_hat.value(2.0), 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.potential_hat.value(-0.5), 0.125, epsilon = 1e-14);

        assert!(composite_graphs(&MonotoneGraph::sign(), 1.5).is_err());
    }

    #[test]
    fn composite_of_generic_graph_matches_builtin() {
        let generic = extend_increasing("cube", Arc::new(|x: f64| x * x * x), &[], 3.0, 10.0).unwrap();
        let builtin = MonotoneGraph::power(3.0).unwrap();
        let q = 4.0;
        let a = composite_graphs(&generic, q).unwrap();
        let b = composite_graphs(&builtin, q).unwrap();
        for &x in &[-1.5, -0.3, 0.2, 1.1] {
            assert_abs_diff_eq!(a.potential_hat.value(x), b.potential_hat.value(x), epsilon = 1e-8);
            assert_abs_diff_eq!(a.potential_tilde.value(x), b.potential_tilde.value(x), epsilon = 1e-8);
            assert_abs_diff_eq!(a.f_tilde.base_value(x), b.f_tilde.base_value(x), epsilon = 1e-12);
        }
    }

    #[test]
    fn symmetry_examples() {
        let grid: Vec<f64> = (0..=40).map(|i| i as f64 * 0.1).collect();
        let sq = potential_from_graph(&MonotoneGraph::identity()).unwrap();
        let r = check_symmetry(&sq, &grid, 1e-12);
        assert!(r.symmetric);
        assert_eq!(r.max_deviation, 0.0);
        let abs = potential_from_graph(&MonotoneGraph::sign()).unwrap();
        assert!(check_symmetry(&abs, &grid, 1e-12).symmetric);

        let skew = ConvexPotential::new(
            Arc::new(|x: f64| 0.5 * x * x + if x > 0.0 { x * x * x } else { 0.0 }),
            Arc::new(|x: f64| Interval::point(x + if x > 0.0 { 3.0 * x * x } else { 0.0 })),
        );
        let r = check_symmetry(&skew, &[1.0], 1e-12);
        assert!(!r.symmetric);
        assert_abs_diff_eq!(r.max_deviation, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn builtin_invariants_hold() {
        for name in ["identity", "sign", "power:3", "signed_power:2.5", "step_plus_power:3"] {
            MonotoneGraph::from_name(name).unwrap().check_invariants(50.0, 2001).unwrap();
        }
        floor_graph().check_invariants(0.9, 501).unwrap();
    }
}
