//! Differential polynomials in jet coordinates of the unknown field.
//!
//! A `DiffPoly<C>` is a polynomial in jet variables `u_{mx,nt}` with
//! coefficients in a ring `C` — scalar expressions for the matrix ansatz
//! work, or noncommutative generator expressions for the prolongation
//! cascade. Total derivatives chain through the jets *and* through any
//! hidden jet dependence of the coefficients themselves (generator symbols
//! like K(x,t,u,u_x) report their dependence through the [`Coeff`] trait).

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use num_bigint::BigInt;
use num_traits::One;

use crate::symcore::{Expr, Indep, Rat};

// ---------------------------------------------------------------------------
// Jet variables and monomials
// ---------------------------------------------------------------------------

/// The jet variable u_{mx,nt}: m x-derivatives, n t-derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct JetVar {
    pub m: u32,
    pub n: u32,
}

impl JetVar {
    pub fn new(m: u32, n: u32) -> Self {
        JetVar { m, n }
    }

    pub fn base() -> Self {
        JetVar { m: 0, n: 0 }
    }

    pub fn bump(self, v: Indep) -> Self {
        match v {
            Indep::X => JetVar {
                m: self.m + 1,
                n: self.n,
            },
            Indep::T => JetVar {
                m: self.m,
                n: self.n + 1,
            },
        }
    }
}

/// Lexicographic by (n, m): t-order dominates.
impl Ord for JetVar {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.n, self.m).cmp(&(other.n, other.m))
    }
}

impl PartialOrd for JetVar {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for JetVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.m == 0 && self.n == 0 {
            f.write_str("u")
        } else {
            write!(
                f,
                "u_{}{}",
                "x".repeat(self.m as usize),
                "t".repeat(self.n as usize)
            )
        }
    }
}

/// Multiset of jet variables with positive exponents.
#[derive(Debug, Clone, PartialEq, Eq, Default, Hash)]
pub struct JetMono(pub BTreeMap<JetVar, u32>);

impl JetMono {
    pub fn unit() -> Self {
        JetMono(BTreeMap::new())
    }

    pub fn var(j: JetVar) -> Self {
        let mut m = BTreeMap::new();
        m.insert(j, 1);
        JetMono(m)
    }

    pub fn is_unit(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total_degree(&self) -> u32 {
        self.0.values().sum()
    }

    pub fn mul(&self, o: &JetMono) -> JetMono {
        let mut out = self.0.clone();
        for (j, e) in &o.0 {
            *out.entry(*j).or_insert(0) += e;
        }
        JetMono(out)
    }

    pub fn exponent(&self, j: JetVar) -> u32 {
        self.0.get(&j).copied().unwrap_or(0)
    }

    pub fn max_x_order(&self) -> Option<u32> {
        self.0.keys().filter(|j| j.n == 0).map(|j| j.m).max()
    }

    pub fn has_t_jets(&self) -> bool {
        self.0.keys().any(|j| j.n > 0)
    }
}

/// Total degree first, then lexicographic on the (n,m)-ordered variables.
impl Ord for JetMono {
    fn cmp(&self, other: &Self) -> Ordering {
        match self.total_degree().cmp(&other.total_degree()) {
            Ordering::Equal => self.0.cmp(&other.0),
            ord => ord,
        }
    }
}

impl PartialOrd for JetMono {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for JetMono {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_unit() {
            return f.write_str("1");
        }
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|(j, e)| {
                if *e == 1 {
                    format!("{j}")
                } else {
                    format!("{j}^{e}")
                }
            })
            .collect();
        f.write_str(&parts.join("*"))
    }
}

// ---------------------------------------------------------------------------
// Coefficient ring abstraction
// ---------------------------------------------------------------------------

/// Ring of coefficients for differential polynomials. Implementations must
/// report how their values change under total derivatives: explicit (x,t)
/// dependence plus any dependence on jets of the field (via generator
/// symbols). The jet-chain contributions come back as a `DiffPoly` because
/// they multiply fresh jet variables.
pub trait Coeff: Clone + PartialEq + Eq + fmt::Debug + fmt::Display {
    fn zero() -> Self;
    fn is_zero(&self) -> bool;
    fn add(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn from_expr(e: Expr) -> Self;
    fn mul_expr(&self, e: &Expr) -> Self;
    /// Total derivative of the coefficient value itself.
    fn total_deriv(&self, v: Indep) -> DiffPoly<Self>;
}

impl Coeff for Expr {
    fn zero() -> Self {
        Expr::zero()
    }
    fn is_zero(&self) -> bool {
        Expr::is_zero(self)
    }
    fn add(&self, o: &Self) -> Self {
        Expr::add(self, o)
    }
    fn neg(&self) -> Self {
        Expr::neg(self)
    }
    fn mul(&self, o: &Self) -> Self {
        Expr::mul(self, o)
    }
    fn from_expr(e: Expr) -> Self {
        e
    }
    fn mul_expr(&self, e: &Expr) -> Self {
        Expr::mul(self, e)
    }
    fn total_deriv(&self, v: Indep) -> DiffPoly<Self> {
        DiffPoly::constant(self.diff(v))
    }
}

// ---------------------------------------------------------------------------
// Differential polynomials
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffPoly<C: Coeff>(pub BTreeMap<JetMono, C>);

impl<C: Coeff> Default for DiffPoly<C> {
    fn default() -> Self {
        DiffPoly(BTreeMap::new())
    }
}

impl<C: Coeff> DiffPoly<C> {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: C) -> Self {
        let mut m = BTreeMap::new();
        if !c.is_zero() {
            m.insert(JetMono::unit(), c);
        }
        DiffPoly(m)
    }

    pub fn jet(j: JetVar) -> Self {
        let mut m = BTreeMap::new();
        m.insert(JetMono::var(j), C::from_expr(Expr::one()));
        DiffPoly(m)
    }

    pub fn term(mono: JetMono, c: C) -> Self {
        let mut m = BTreeMap::new();
        if !c.is_zero() {
            m.insert(mono, c);
        }
        DiffPoly(m)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn add_term(&mut self, mono: JetMono, c: C) {
        if c.is_zero() {
            return;
        }
        match self.0.entry(mono) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let sum = e.get().add(&c);
                if sum.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = sum;
                }
            }
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut out = self.clone();
        for (m, c) in &o.0 {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub fn neg(&self) -> Self {
        DiffPoly(self.0.iter().map(|(m, c)| (m.clone(), c.neg())).collect())
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.neg())
    }

    pub fn mul(&self, o: &Self) -> Self {
        let mut out = Self::zero();
        for (m, c) in &self.0 {
            for (mm, cc) in &o.0 {
                out.add_term(m.mul(mm), c.mul(cc));
            }
        }
        out
    }

    pub fn mul_expr(&self, e: &Expr) -> Self {
        if e.is_zero() {
            return Self::zero();
        }
        DiffPoly(
            self.0
                .iter()
                .map(|(m, c)| (m.clone(), c.mul_expr(e)))
                .collect(),
        )
    }

    pub fn mul_coeff(&self, c: &C) -> Self {
        if c.is_zero() {
            return Self::zero();
        }
        let mut out = Self::zero();
        for (m, cc) in &self.0 {
            out.add_term(m.clone(), cc.mul(c));
        }
        out
    }

    /// Embeds a scalar differential polynomial into this coefficient ring.
    pub fn lift(p: &DiffPoly<Expr>) -> Self {
        DiffPoly(
            p.0.iter()
                .filter(|(_, c)| !Expr::is_zero(c))
                .map(|(m, c)| (m.clone(), C::from_expr(c.clone())))
                .collect(),
        )
    }

    pub fn max_x_order(&self) -> Option<u32> {
        self.0.keys().filter_map(JetMono::max_x_order).max()
    }

    pub fn has_t_jets(&self) -> bool {
        self.0.keys().any(JetMono::has_t_jets)
    }

    /// Partial derivative with respect to a single jet variable (pure
    /// polynomial differentiation; coefficients untouched).
    pub fn partial_jet(&self, j: JetVar) -> Self {
        let mut out = Self::zero();
        for (m, c) in &self.0 {
            let e = m.exponent(j);
            if e == 0 {
                continue;
            }
            let mut rest = m.clone();
            if e == 1 {
                rest.0.remove(&j);
            } else {
                *rest.0.get_mut(&j).expect("present") -= 1;
            }
            out.add_term(rest, c.mul_expr(&Expr::from_int(e as i64)));
        }
        out
    }

    /// Total derivative D_v: explicit coefficient dependence (including any
    /// jet-chain dependence the coefficients report) plus the jet chain of
    /// the monomials themselves.
    pub fn total(&self, v: Indep) -> Self {
        let mut out = Self::zero();
        for (m, c) in &self.0 {
            // Coefficient part: total_deriv may itself carry jet factors.
            for (dm, dc) in c.total_deriv(v).0 {
                out.add_term(dm.mul(m), dc);
            }
            // Monomial chain rule.
            for (j, e) in &m.0 {
                let mut rest = m.clone();
                if *e == 1 {
                    rest.0.remove(j);
                } else {
                    *rest.0.get_mut(j).expect("present") -= 1;
                }
                let bumped = rest.mul(&JetMono::var(j.bump(v)));
                out.add_term(bumped, c.mul_expr(&Expr::from_int(*e as i64)));
            }
        }
        out
    }

    pub fn total_x(&self) -> Self {
        self.total(Indep::X)
    }

    pub fn total_t(&self) -> Self {
        self.total(Indep::T)
    }

    /// Eliminates every t-derivative jet using the evolution equation
    /// u_t = rhs: u_{mx,nt} -> D_x^m applied to the reduced D_t^{n-1} rhs.
    pub fn reduce_t(&self, eq: &EvolutionEquation) -> Self {
        let mut memo: HashMap<(u32, u32), DiffPoly<Expr>> = HashMap::new();
        self.reduce_t_memo(eq, &mut memo)
    }

    fn reduce_t_memo(
        &self,
        eq: &EvolutionEquation,
        memo: &mut HashMap<(u32, u32), DiffPoly<Expr>>,
    ) -> Self {
        let mut out = Self::zero();
        for (m, c) in &self.0 {
            let mut term = Self::constant(c.clone());
            for (j, e) in &m.0 {
                let factor = if j.n == 0 {
                    Self::jet(*j)
                } else {
                    Self::lift(&jet_value(*j, eq, memo))
                };
                for _ in 0..*e {
                    term = term.mul(&factor);
                }
            }
            out = out.add(&term);
        }
        out
    }

    /// Collects (jet monomial, coefficient) pairs in the canonical order.
    pub fn collect_jets(&self) -> Vec<(JetMono, C)> {
        self.0
            .iter()
            .map(|(m, c)| (m.clone(), c.clone()))
            .collect()
    }

    /// Antiderivative with respect to jet variable `j`: each factor J^k
    /// becomes J^{k+1}/(k+1). The integration "constant" is the caller's
    /// remainder term.
    pub fn integrate_jet(&self, j: JetVar) -> Self {
        let mut out = Self::zero();
        for (m, c) in &self.0 {
            let e = m.exponent(j);
            let mut mono = m.clone();
            *mono.0.entry(j).or_insert(0) += 1;
            let scale = Expr::from_rat(Rat::new(BigInt::one(), BigInt::from(e as i64 + 1)));
            out.add_term(mono, c.mul_expr(&scale));
        }
        out
    }

    /// Substitutes the base jet variable u by a concrete scalar expression
    /// (used by the Painlevé truncation, which needs u -> series in phi).
    pub fn eval_jets(&self, values: &dyn Fn(JetVar) -> Expr) -> Vec<(C, Expr)> {
        self.0
            .iter()
            .map(|(m, c)| {
                let mut v = Expr::one();
                for (j, e) in &m.0 {
                    v = v.mul(&values(*j).pow_i(*e as i64));
                }
                (c.clone(), v)
            })
            .collect()
    }
}

/// Value of the jet u_{mx,nt} (n >= 1) under the evolution equation,
/// reduced to x-jets: D_x^m of the reduced D_t^{n-1} of the rhs.
fn jet_value(
    j: JetVar,
    eq: &EvolutionEquation,
    memo: &mut HashMap<(u32, u32), DiffPoly<Expr>>,
) -> DiffPoly<Expr> {
    assert!(j.n >= 1);
    if let Some(v) = memo.get(&(j.m, j.n)) {
        return v.clone();
    }
    let base: DiffPoly<Expr> = if j.n == 1 {
        eq.rhs.clone()
    } else {
        // D_t of the (n-1) value, then re-reduce the fresh first-order
        // t-jets it introduces.
        let prev = jet_value(JetVar::new(0, j.n - 1), eq, memo);
        prev.total_t().reduce_t_memo(eq, memo)
    };
    let mut val = if j.m == 0 {
        base
    } else {
        let lower = jet_value(JetVar::new(j.m - 1, j.n), eq, memo);
        lower.total_x()
    };
    // x-differentiation cannot reintroduce t-jets from an x-jet expression.
    debug_assert!(!val.has_t_jets());
    if val.is_zero() {
        val = DiffPoly::zero();
    }
    memo.insert((j.m, j.n), val.clone());
    val
}

impl<C: Coeff> fmt::Display for DiffPoly<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        let parts: Vec<String> = self
            .0
            .iter()
            .rev()
            .map(|(m, c)| {
                if m.is_unit() {
                    format!("({c})")
                } else {
                    format!("({c})*{m}")
                }
            })
            .collect();
        f.write_str(&parts.join(" + "))
    }
}

// ---------------------------------------------------------------------------
// Evolution equations
// ---------------------------------------------------------------------------

/// u_t = rhs with rhs free of t-jets; displayed as u_t + (-rhs) = 0.
#[derive(Debug, Clone)]
pub struct EvolutionEquation {
    /// Name of the unknown field as written in case files (u or v).
    pub field: String,
    pub rhs: DiffPoly<Expr>,
}

impl EvolutionEquation {
    pub fn new(field: &str, rhs: DiffPoly<Expr>) -> Self {
        assert!(!rhs.has_t_jets(), "evolution rhs must be free of t-jets");
        EvolutionEquation {
            field: field.to_string(),
            rhs,
        }
    }

    /// Spatial order of the equation (max x-derivative on the rhs).
    pub fn order(&self) -> u32 {
        self.rhs.max_x_order().unwrap_or(0)
    }

    /// The equation as the residual polynomial u_t - rhs.
    pub fn residual_poly(&self) -> DiffPoly<Expr> {
        DiffPoly::jet(JetVar::new(0, 1)).sub(&self.rhs)
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symcore::VarDeps;

    type P = DiffPoly<Expr>;

    fn fx(name: &str) -> Expr {
        Expr::func(name, VarDeps::XT)
    }

    fn mkdv() -> EvolutionEquation {
        // v_t = -b1*v_xxx - b2*v^2*v_x
        let b1 = fx("b1");
        let b2 = fx("b2");
        let vxxx = P::jet(JetVar::new(3, 0));
        let v = P::jet(JetVar::base());
        let vx = P::jet(JetVar::new(1, 0));
        let rhs = vxxx
            .mul_expr(&b1.neg())
            .add(&v.mul(&v).mul(&vx).mul_expr(&b2.neg()));
        EvolutionEquation::new("v", rhs)
    }

    #[test]
    fn total_x_of_base_jet() {
        let u = P::jet(JetVar::base());
        assert_eq!(u.total_x(), P::jet(JetVar::new(1, 0)));
    }

    #[test]
    fn total_x_leibniz() {
        // D_x(b1 * u * u_xx) = b1_x u u_xx + b1 u_x u_xx + b1 u u_xxx
        let b1 = fx("b1");
        let p = P::term(
            JetMono::var(JetVar::base()).mul(&JetMono::var(JetVar::new(2, 0))),
            b1.clone(),
        );
        let d = p.total_x();
        let mut expect = P::zero();
        expect.add_term(
            JetMono::var(JetVar::base()).mul(&JetMono::var(JetVar::new(2, 0))),
            b1.diff(Indep::X),
        );
        expect.add_term(
            JetMono::var(JetVar::new(1, 0)).mul(&JetMono::var(JetVar::new(2, 0))),
            b1.clone(),
        );
        expect.add_term(
            JetMono::var(JetVar::base()).mul(&JetMono::var(JetVar::new(3, 0))),
            b1.clone(),
        );
        assert_eq!(d, expect);
    }

    #[test]
    fn reduce_first_order_t_jet() {
        let eq = mkdv();
        let vt = P::jet(JetVar::new(0, 1));
        assert_eq!(vt.reduce_t(&eq), eq.rhs);
    }

    #[test]
    fn reduce_mixed_jet_commutes() {
        let eq = mkdv();
        let vxt = P::jet(JetVar::new(1, 1));
        assert_eq!(vxt.reduce_t(&eq), eq.rhs.total_x());
    }

    #[test]
    fn reduce_is_identity_on_x_jets() {
        let eq = mkdv();
        let p = P::jet(JetVar::base()).mul(&P::jet(JetVar::new(2, 0)));
        assert_eq!(p.reduce_t(&eq), p);
    }

    #[test]
    fn reduce_second_t_derivative_matches_total() {
        let eq = mkdv();
        // v_tt reduced == D_t(reduced v_t) re-reduced
        let vtt = P::jet(JetVar::new(0, 2)).reduce_t(&eq);
        let alt = eq.rhs.total_t().reduce_t(&eq);
        assert_eq!(vtt, alt);
    }

    #[test]
    fn integrate_jet_examples() {
        let ux = JetVar::new(1, 0);
        let p = P::term(
            JetMono::var(ux).mul(&JetMono::var(ux)),
            Expr::one(),
        );
        let int = p.integrate_jet(ux);
        let mut expect = P::zero();
        let mut cube = JetMono::unit();
        cube.0.insert(ux, 3);
        expect.add_term(cube, Expr::from_rat(crate::symcore::rat(1, 3)));
        assert_eq!(int, expect);
        // d/dJ of the integral gives back p
        assert_eq!(int.partial_jet(ux), p);
    }

    #[test]
    fn totals_commute() {
        let b1 = fx("b1");
        let p = P::term(
            JetMono::var(JetVar::new(1, 0)).mul(&JetMono::var(JetVar::new(0, 1))),
            b1,
        );
        assert_eq!(p.total_x().total_t(), p.total_t().total_x());
    }

    #[test]
    fn collect_round_trip() {
        let eq = mkdv();
        let p = eq.rhs.clone();
        let mut rebuilt = P::zero();
        for (m, c) in p.collect_jets() {
            rebuilt.add_term(m, c);
        }
        assert_eq!(rebuilt, p);
    }
}
