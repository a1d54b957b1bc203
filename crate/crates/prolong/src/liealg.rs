//! Free associative algebra over abstract generator symbols with scalar
//! expression coefficients.
//!
//! Generators model matrix-valued unknowns: the prolongation generators
//! X0..X10, the unknown connection component F (a function of x, t and the
//! field u), and the cascade remainders K^i (functions of x, t, u, ...,
//! u_{px}). Each generator carries a derivative multi-index; differentiation
//! produces fresh linked symbols (X1 -> X1_x) exactly as the paper treats
//! them. Commutators expand to AB - BA; bracket aliases (X4 = [X1,X2], ...)
//! are opaque generators with a defining table and can be expanded or
//! greedily rewritten back.

use std::collections::BTreeMap;
use std::fmt;

use crate::jetalg::{Coeff, DiffPoly, JetMono, JetVar};
use crate::symcore::{Expr, Indep};

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// What a generator-valued unknown may depend on (besides x and t).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GenDeps {
    /// Function of x and t only (the X_i).
    XT,
    /// Function of x, t, u, u_x, ..., u_{px} (F has p = 0; remainders K^i
    /// have decreasing p as the cascade peels).
    Jets(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Gen {
    pub name: String,
    pub deps: GenDeps,
    pub dx: u32,
    pub dt: u32,
    /// du[j] = number of partial derivatives with respect to u_{jx};
    /// trailing zeros trimmed so equality is well-defined.
    pub du: Vec<u32>,
}

/// A derivative slot of a generator-valued unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    X,
    T,
    /// Partial with respect to u_{jx}.
    U(u32),
}

impl Gen {
    pub fn new(name: &str, deps: GenDeps) -> Self {
        Gen {
            name: name.to_string(),
            deps,
            dx: 0,
            dt: 0,
            du: Vec::new(),
        }
    }

    pub fn xt(name: &str) -> Self {
        Gen::new(name, GenDeps::XT)
    }

    pub fn is_base(&self) -> bool {
        self.dx == 0 && self.dt == 0 && self.du.iter().all(|&d| d == 0)
    }

    /// Derivative of this generator along `slot`, or None if the generator
    /// does not depend on that slot.
    pub fn deriv(&self, slot: Slot) -> Option<Gen> {
        let mut g = self.clone();
        match slot {
            Slot::X => g.dx += 1,
            Slot::T => g.dt += 1,
            Slot::U(j) => match self.deps {
                GenDeps::XT => return None,
                GenDeps::Jets(p) => {
                    if j > p {
                        return None;
                    }
                    if g.du.len() <= j as usize {
                        g.du.resize(j as usize + 1, 0);
                    }
                    g.du[j as usize] += 1;
                }
            },
        }
        Some(g)
    }

    /// Highest jet order this generator depends on, if any.
    pub fn jet_dep(&self) -> Option<u32> {
        match self.deps {
            GenDeps::XT => None,
            GenDeps::Jets(p) => Some(p),
        }
    }
}

impl fmt::Display for Gen {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)?;
        if self.is_base() {
            return Ok(());
        }
        f.write_str("_")?;
        f.write_str(&"x".repeat(self.dx as usize))?;
        f.write_str(&"t".repeat(self.dt as usize))?;
        for (j, d) in self.du.iter().enumerate() {
            if *d == 0 {
                continue;
            }
            if j == 0 {
                f.write_str(&"u".repeat(*d as usize))?;
            } else {
                write!(f, "{{u_{}x}}^{}", j, d)?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// NCExpr: free-algebra elements
// ---------------------------------------------------------------------------

pub type Word = Vec<Gen>;

/// Element of the free associative algebra: word -> scalar coefficient.
/// The empty word is the scalar unit.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NCExpr(pub BTreeMap<Word, Expr>);

impl NCExpr {
    pub fn zero() -> Self {
        NCExpr(BTreeMap::new())
    }

    pub fn one() -> Self {
        NCExpr::scalar(Expr::one())
    }

    pub fn scalar(e: Expr) -> Self {
        let mut m = BTreeMap::new();
        if !e.is_zero() {
            m.insert(Vec::new(), e);
        }
        NCExpr(m)
    }

    pub fn gen(g: Gen) -> Self {
        let mut m = BTreeMap::new();
        m.insert(vec![g], Expr::one());
        NCExpr(m)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn add_term(&mut self, w: Word, c: Expr) {
        if c.is_zero() {
            return;
        }
        match self.0.entry(w) {
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
        for (w, c) in &o.0 {
            out.add_term(w.clone(), c.clone());
        }
        out
    }

    pub fn neg(&self) -> Self {
        NCExpr(self.0.iter().map(|(w, c)| (w.clone(), c.neg())).collect())
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.neg())
    }

    pub fn mul(&self, o: &Self) -> Self {
        let mut out = Self::zero();
        for (w, c) in &self.0 {
            for (ww, cc) in &o.0 {
                let mut word = w.clone();
                word.extend(ww.iter().cloned());
                out.add_term(word, c.mul(cc));
            }
        }
        out
    }

    pub fn scale(&self, e: &Expr) -> Self {
        if e.is_zero() {
            return Self::zero();
        }
        NCExpr(
            self.0
                .iter()
                .map(|(w, c)| (w.clone(), c.mul(e)))
                .collect(),
        )
    }

    pub fn commutator(&self, o: &Self) -> Self {
        self.mul(o).sub(&o.mul(self))
    }

    /// Partial derivative along a slot: differentiates coefficients (for
    /// x/t) and applies the product rule over each word's generators.
    pub fn partial(&self, slot: Slot) -> Self {
        let mut out = Self::zero();
        for (w, c) in &self.0 {
            match slot {
                Slot::X => out.add_term(w.clone(), c.diff(Indep::X)),
                Slot::T => out.add_term(w.clone(), c.diff(Indep::T)),
                Slot::U(_) => {}
            }
            for (i, g) in w.iter().enumerate() {
                if let Some(dg) = g.deriv(slot) {
                    let mut word = w.clone();
                    word[i] = dg;
                    out.add_term(word, c.clone());
                }
            }
        }
        out
    }

    /// Highest jet order any generator in the expression depends on.
    pub fn max_jet_dep(&self) -> Option<u32> {
        self.0
            .keys()
            .flat_map(|w| w.iter().filter_map(Gen::jet_dep))
            .max()
    }

    /// All distinct generator base names appearing in the expression.
    pub fn gen_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .0
            .keys()
            .flat_map(|w| w.iter().map(|g| g.name.clone()))
            .collect();
        names.sort();
        names.dedup();
        names
    }

    /// Replaces every generator with base name `name` by the `du`-fold
    /// u-derivative of `repl` (a u-polynomial with NC coefficients), with
    /// the x/t multi-index applied afterwards. Used to expand F = X1 + X2 u.
    pub fn expand_gen(&self, name: &str, repl: &DiffPoly<NCExpr>) -> DiffPoly<NCExpr> {
        let mut out = DiffPoly::zero();
        for (w, c) in &self.0 {
            let mut term = DiffPoly::constant(NCExpr::scalar(c.clone()));
            for g in w {
                let factor: DiffPoly<NCExpr> = if g.name == name {
                    let mut r = repl.clone();
                    // u-derivatives first (polynomial differentiation in u),
                    for (j, d) in g.du.iter().enumerate() {
                        for _ in 0..*d {
                            r = r.partial_jet(JetVar::new(j as u32, 0));
                        }
                    }
                    // then the explicit x/t decorations.
                    for _ in 0..g.dx {
                        r = partial_nc(&r, Slot::X);
                    }
                    for _ in 0..g.dt {
                        r = partial_nc(&r, Slot::T);
                    }
                    r
                } else {
                    DiffPoly::constant(NCExpr::gen(g.clone()))
                };
                term = term.mul(&factor);
            }
            out = out.add(&term);
        }
        out
    }
}

/// Partial (not total) derivative of an NC differential polynomial: the jet
/// monomials are untouched; only coefficients and generator decorations move.
pub fn partial_nc(p: &DiffPoly<NCExpr>, slot: Slot) -> DiffPoly<NCExpr> {
    let mut out = DiffPoly::zero();
    for (m, c) in &p.0 {
        out.add_term(m.clone(), c.partial(slot));
    }
    out
}

impl Coeff for NCExpr {
    fn zero() -> Self {
        NCExpr::zero()
    }
    fn is_zero(&self) -> bool {
        NCExpr::is_zero(self)
    }
    fn add(&self, o: &Self) -> Self {
        NCExpr::add(self, o)
    }
    fn neg(&self) -> Self {
        NCExpr::neg(self)
    }
    fn mul(&self, o: &Self) -> Self {
        NCExpr::mul(self, o)
    }
    fn from_expr(e: Expr) -> Self {
        NCExpr::scalar(e)
    }
    fn mul_expr(&self, e: &Expr) -> Self {
        self.scale(e)
    }
    /// Total derivative: explicit x/t dependence plus the chain through
    /// every jet slot the generators depend on. Chaining u_{jx} under D_x
    /// multiplies by u_{(j+1)x}; under D_t it multiplies by u_{jx,t} (to be
    /// eliminated later by the evolution reduction).
    fn total_deriv(&self, v: Indep) -> DiffPoly<Self> {
        let slot = match v {
            Indep::X => Slot::X,
            Indep::T => Slot::T,
        };
        let mut out = DiffPoly::constant(self.partial(slot));
        if let Some(p) = self.max_jet_dep() {
            for j in 0..=p {
                let d = self.partial(Slot::U(j));
                if d.is_zero() {
                    continue;
                }
                let chain = match v {
                    Indep::X => JetVar::new(j + 1, 0),
                    Indep::T => JetVar::new(j, 1),
                };
                out.add_term(JetMono::var(chain), d);
            }
        }
        out
    }
}

impl fmt::Display for NCExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|(w, c)| {
                let word = w
                    .iter()
                    .map(|g| format!("{g}"))
                    .collect::<Vec<_>>()
                    .join("*");
                if w.is_empty() {
                    format!("({c})")
                } else {
                    format!("({c})*{word}")
                }
            })
            .collect();
        f.write_str(&parts.join(" + "))
    }
}

// ---------------------------------------------------------------------------
// Bracket tables and alias handling
// ---------------------------------------------------------------------------

/// Alias symbol -> defining bracket pair (by generator base name), acyclic.
#[derive(Debug, Clone, Default)]
pub struct BracketTable {
    pub defs: BTreeMap<String, (String, String)>,
}

impl BracketTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn define(&mut self, alias: &str, left: &str, right: &str) {
        self.defs
            .insert(alias.to_string(), (left.to_string(), right.to_string()));
    }

    /// The standard table of the vcKdV cascade:
    /// X4=[X1,X2], X5=[X1,X4], X6=[X2,X4], X7=[X1,X5], X8=[X2,X5],
    /// X9=[X1,X6], X10=[X2,X6].
    pub fn kdv_standard() -> Self {
        let mut t = Self::new();
        t.define("X4", "X1", "X2");
        t.define("X5", "X1", "X4");
        t.define("X6", "X2", "X4");
        t.define("X7", "X1", "X5");
        t.define("X8", "X2", "X5");
        t.define("X9", "X1", "X6");
        t.define("X10", "X2", "X6");
        t
    }

    /// Fully expands alias generators into words over non-alias generators.
    /// Derivative decorations distribute over the defining bracket.
    pub fn expand(&self, e: &NCExpr) -> NCExpr {
        let mut out = NCExpr::zero();
        for (w, c) in &e.0 {
            let mut term = NCExpr::scalar(c.clone());
            for g in w {
                term = term.mul(&self.expand_gen(g));
            }
            out = out.add(&term);
        }
        out
    }

    fn expand_gen(&self, g: &Gen) -> NCExpr {
        match self.defs.get(&g.name) {
            None => NCExpr::gen(g.clone()),
            Some((l, r)) => {
                let left = self.expand_gen(&Gen::new(l, g.deps));
                let right = self.expand_gen(&Gen::new(r, g.deps));
                let mut e = left.commutator(&right);
                for _ in 0..g.dx {
                    e = e.partial(Slot::X);
                }
                for _ in 0..g.dt {
                    e = e.partial(Slot::T);
                }
                debug_assert!(g.du.iter().all(|&d| d == 0));
                e
            }
        }
    }

    /// Word length of an alias's full expansion (bracket depth + 1).
    fn alias_len(&self, name: &str) -> usize {
        match self.defs.get(name) {
            None => 1,
            Some((l, r)) => self.alias_len(l) + self.alias_len(r),
        }
    }

    /// Aliases in rewrite priority order: longest expansion first, then
    /// lowest numeric index.
    fn rewrite_order(&self) -> Vec<String> {
        let mut names: Vec<String> = self.defs.keys().cloned().collect();
        names.sort_by_key(|n| {
            let idx: u64 = n
                .trim_start_matches(|c: char| c.is_alphabetic())
                .parse()
                .unwrap_or(u64::MAX);
            (std::cmp::Reverse(self.alias_len(n)), idx)
        });
        names
    }
}

/// Normal form: all bracket aliases expanded to plain words. (Commutators
/// are already expanded at construction time; this also resolves aliases so
/// that equality is decided in the free algebra.)
pub fn nc_normalize(e: &NCExpr, table: &BracketTable) -> NCExpr {
    table.expand(e)
}

/// Equality in the free algebra modulo the alias definitions.
pub fn nc_equal(a: &NCExpr, b: &NCExpr, table: &BracketTable) -> bool {
    nc_normalize(a, table).sub(&nc_normalize(b, table)).is_zero()
}

/// Greedy rewrite of expanded words back into bracket aliases: longest alias
/// first, then lowest index; each alias's expansion is eliminated through
/// its leading word. Round-trips: nc_normalize(bracket_rewrite(e)) ==
/// nc_normalize(e).
pub fn bracket_rewrite(e: &NCExpr, table: &BracketTable) -> NCExpr {
    let mut rem = table.expand(e);
    let mut out = NCExpr::zero();
    for _ in 0..8 {
        let mut changed = false;
        for name in table.rewrite_order() {
            let alias = NCExpr::gen(Gen::xt(&name));
            let expansion = table.expand(&alias);
            let lead = match expansion.0.keys().next_back() {
                Some(w) => w.clone(),
                None => continue,
            };
            let lead_coeff = expansion.0[&lead].clone();
            while let Some(c) = rem.0.get(&lead).cloned() {
                let q = c.div(&lead_coeff);
                rem = rem.sub(&expansion.scale(&q));
                out = out.add(&alias.scale(&q));
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    out.add(&rem)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn g(name: &str) -> NCExpr {
        NCExpr::gen(Gen::xt(name))
    }

    #[test]
    fn antisymmetry() {
        let a = g("A");
        let b = g("B");
        assert!(a.commutator(&b).add(&b.commutator(&a)).is_zero());
    }

    #[test]
    fn jacobi() {
        let a = g("A");
        let b = g("B");
        let c = g("C");
        let j = a
            .commutator(&b.commutator(&c))
            .add(&b.commutator(&c.commutator(&a)))
            .add(&c.commutator(&a.commutator(&b)));
        assert!(j.is_zero());
    }

    #[test]
    fn commutator_expansion() {
        let x1 = g("X1");
        let x2 = g("X2");
        let com = x1.commutator(&x2);
        let expect = x1.mul(&x2).sub(&x2.mul(&x1));
        assert_eq!(com, expect);
    }

    #[test]
    fn alias_expansion_and_equality() {
        let table = BracketTable::kdv_standard();
        let x4 = g("X4");
        let expect = g("X1").commutator(&g("X2"));
        assert!(nc_equal(&x4, &expect, &table));
    }

    #[test]
    fn rewrite_basic() {
        let table = BracketTable::kdv_standard();
        let e = g("X1").mul(&g("X2")).sub(&g("X2").mul(&g("X1")));
        let r = bracket_rewrite(&e, &table);
        assert_eq!(r, g("X4"));
    }

    #[test]
    fn rewrite_nested_alias_chain() {
        let table = BracketTable::kdv_standard();
        // [X1,[X1,X4]] = [X1,X5] = X7
        let e = g("X1").commutator(&g("X1").commutator(&table.expand(&g("X4"))));
        let r = bracket_rewrite(&e, &table);
        assert_eq!(r, g("X7"));
    }

    #[test]
    fn rewrite_round_trips() {
        let table = BracketTable::kdv_standard();
        let e = g("X1")
            .commutator(&g("X2").commutator(&g("X1")))
            .add(&g("X2").mul(&g("X2")))
            .scale(&Expr::func("a6", crate::symcore::VarDeps::XT));
        let r = bracket_rewrite(&e, &table);
        assert!(nc_equal(&r, &e, &table));
    }

    #[test]
    fn derivative_bookkeeping() {
        // d/dx [X1,X0] = [X1_x,X0] + [X1,X0_x]
        let e = g("X1").commutator(&g("X0"));
        let d = e.partial(Slot::X);
        let mut x1x = Gen::xt("X1");
        x1x.dx = 1;
        let mut x0x = Gen::xt("X0");
        x0x.dx = 1;
        let expect = NCExpr::gen(x1x)
            .commutator(&g("X0"))
            .add(&g("X1").commutator(&NCExpr::gen(x0x)));
        assert_eq!(d, expect);
    }

    #[test]
    fn total_deriv_chains_through_jets() {
        // D_x F(x,t,u) = F_x + F_u * u_x
        let f = NCExpr::gen(Gen::new("F", GenDeps::Jets(0)));
        let d = f.total_deriv(Indep::X);
        let fx = f.partial(Slot::X);
        let fu = f.partial(Slot::U(0));
        let mut expect: DiffPoly<NCExpr> = DiffPoly::constant(fx);
        expect.add_term(JetMono::var(JetVar::new(1, 0)), fu);
        assert_eq!(d, expect);
    }
}
