//! Truncated singular-manifold machinery.
//!
//! Given an evolution equation, `leading_order` finds the integer power α of
//! the dominant balance, `truncate_and_collect` substitutes the truncated
//! series u = Σ_{m=0..α} u_m φ^{m−α} and collects the residual by powers of
//! the manifold function φ, and `verify_truncation` / `verify_solution` check
//! closed-form coefficient choices and solutions. Derivatives of φ other than
//! φ_x are eliminated through the rewrite rules φ_t → C·φ_x and φ_xx → V·φ_x
//! together with their total-derivative closure (φ_xt = (C·φ_x)_x and so on).

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::jetalg::{DiffPoly, EvolutionEquation, JetMono, JetVar};
use crate::papercases::{CaseFile, CaseOutcome, Outcome};
use crate::parser::{parse_diffpoly, parse_expr};
use crate::symcore::{Atom, Bindings, Expr, Indep, Poly, VarDeps};
use crate::zcc::{self, Report, ReportRecord};

// ---------------------------------------------------------------------------
// Leading-order analysis
// ---------------------------------------------------------------------------

/// Largest α considered before declaring the balance non-integer.
pub const MAX_ALPHA: u32 = 6;

/// Exponent of the most singular part of a jet monomial under u ~ u₀φ^{−α}:
/// each factor u_{mx,nt}^e contributes e·(−α − m − n).
fn singular_exponent(m: &JetMono, alpha: u32) -> i64 {
    m.0.iter()
        .map(|(j, e)| *e as i64 * (-(alpha as i64) - j.m as i64 - j.n as i64))
        .sum()
}

/// Smallest positive integer α ≤ [`MAX_ALPHA`] for which at least two terms
/// of the equation share the most singular exponent, together with the
/// balancing term set. No integer balance means the series would need
/// fractional powers (a Puiseux expansion), which is detected, not expanded.
pub fn leading_order(eq: &EvolutionEquation) -> Result<(u32, Vec<JetMono>)> {
    let res = eq.residual_poly();
    if res.0.len() < 2 {
        return Err(Error::Verify(
            "leading-order analysis needs at least two terms".into(),
        ));
    }
    for alpha in 1..=MAX_ALPHA {
        let min = res
            .0
            .keys()
            .map(|m| singular_exponent(m, alpha))
            .min()
            .expect("nonempty residual");
        let balance: Vec<JetMono> = res
            .0
            .keys()
            .filter(|m| singular_exponent(m, alpha) == min)
            .cloned()
            .collect();
        if balance.len() >= 2 {
            return Ok((alpha, balance));
        }
    }
    Err(Error::Verify(format!(
        "no integer dominant balance for alpha <= {MAX_ALPHA}: the expansion \
         exponent is non-integer (Puiseux series)"
    )))
}

// ---------------------------------------------------------------------------
// Truncated expansion
// ---------------------------------------------------------------------------

/// Truncated series u = Σ_{m=0..α} u_m φ^{m−α}. The coefficients are scalar
/// expressions (usually opaque functions u0, u1, … when generating the order
/// table) and φ is an opaque (x,t)-function identified by name.
#[derive(Debug, Clone)]
pub struct PainleveExpansion {
    pub alpha: u32,
    /// u_0 .. u_alpha, lowest (most singular) first.
    pub coeffs: Vec<Expr>,
    /// Name of the singular-manifold function.
    pub phi: String,
}

impl PainleveExpansion {
    /// Expansion with opaque coefficient functions named `u0..u{alpha}`.
    pub fn generic(alpha: u32, phi: &str) -> Self {
        let coeffs = (0..=alpha)
            .map(|m| Expr::func(&format!("u{m}"), VarDeps::XT))
            .collect();
        PainleveExpansion {
            alpha,
            coeffs,
            phi: phi.to_string(),
        }
    }

    fn phi_atom(&self, dx: u32, dt: u32) -> Atom {
        Atom::Func {
            name: self.phi.clone(),
            deps: VarDeps::XT,
            dx,
            dt,
        }
    }

    /// The truncated series as a scalar expression (φ carried as explicit
    /// negative powers of the undifferentiated atom).
    pub fn ansatz(&self) -> Expr {
        let phi = Expr::atom(self.phi_atom(0, 0));
        let mut terms = Vec::new();
        for (m, um) in self.coeffs.iter().enumerate() {
            terms.push(um.mul(&phi.pow_i(m as i64 - self.alpha as i64)));
        }
        Expr::sum(terms)
    }
}

/// The order-by-order equations produced by the truncation: exponent of φ
/// mapped to the coefficient equation at that order.
#[derive(Debug, Clone)]
pub struct PhiOrderTable {
    pub orders: BTreeMap<i64, Expr>,
}

/// Substitutes an expression for the field and every jet of a differential
/// polynomial, memoizing the mixed derivatives of the replacement.
fn substitute_field(p: &DiffPoly<Expr>, u: &Expr) -> Expr {
    let memo: RefCell<HashMap<JetVar, Expr>> = RefCell::new(HashMap::new());
    fn jet_of(j: JetVar, u: &Expr, memo: &RefCell<HashMap<JetVar, Expr>>) -> Expr {
        if let Some(v) = memo.borrow().get(&j) {
            return v.clone();
        }
        let v = if j.m == 0 && j.n == 0 {
            u.normalize()
        } else if j.n > 0 {
            jet_of(JetVar::new(j.m, j.n - 1), u, memo).diff(Indep::T).normalize()
        } else {
            jet_of(JetVar::new(j.m - 1, 0), u, memo).diff(Indep::X).normalize()
        };
        memo.borrow_mut().insert(j, v.clone());
        v
    }
    let values = |j: JetVar| jet_of(j, u, &memo);
    let terms = p
        .eval_jets(&values)
        .into_iter()
        .map(|(c, v)| c.mul(&v))
        .collect();
    Expr::sum(terms).normalize()
}

/// Substitutes the truncated series into the equation and collects the
/// residual by powers of φ. Fails if a denominator mixes φ with other terms
/// (the split by φ-power would not be well defined there).
pub fn truncate_and_collect(
    eq: &EvolutionEquation,
    exp: &PainleveExpansion,
) -> Result<PhiOrderTable> {
    let total = substitute_field(&eq.residual_poly(), &exp.ansatz());
    let base = exp.phi_atom(0, 0);
    for f in total.den.keys() {
        if f.0.keys().any(|m| m.0.contains_key(&base)) {
            return Err(Error::Verify(format!(
                "truncation residual has a multi-term denominator containing \
                 {}: cannot collect by manifold powers",
                exp.phi
            )));
        }
    }
    let mut buckets: BTreeMap<i64, Poly> = BTreeMap::new();
    for (m, c) in &total.num.0 {
        let k = m.0.get(&base).copied().unwrap_or(0);
        let mut stripped = m.clone();
        stripped.0.remove(&base);
        buckets
            .entry(k)
            .or_insert_with(Poly::zero)
            .add_term(stripped, c.clone());
    }
    let mut den = Expr::one();
    for (f, p) in &total.den {
        den = den.mul(&Expr::from_poly(f.clone()).pow_i(*p as i64));
    }
    let orders = buckets
        .into_iter()
        .map(|(k, p)| (k, Expr::from_poly(p).div(&den)))
        .collect();
    Ok(PhiOrderTable { orders })
}

// ---------------------------------------------------------------------------
// Manifold-derivative elimination (the C/V rewrite closure)
// ---------------------------------------------------------------------------

struct ManifoldRules<'a> {
    phi: &'a str,
    c: &'a Expr,
    v: &'a Expr,
    memo: RefCell<BTreeMap<(u32, u32), Expr>>,
}

impl ManifoldRules<'_> {
    /// Reduced value of the jet φ_{dx·x, dt·t}. Only φ and φ_x survive; a
    /// t-derivative rewrites through φ_t = C·φ_x (strictly lowering the
    /// t-order), then φ_xx rewrites through φ_xx = V·φ_x (strictly lowering
    /// the x-order), so the recursion terminates.
    fn jet(&self, dx: u32, dt: u32) -> Expr {
        if dt == 0 && dx <= 1 {
            return Expr::atom(Atom::Func {
                name: self.phi.to_string(),
                deps: VarDeps::XT,
                dx,
                dt,
            });
        }
        if let Some(v) = self.memo.borrow().get(&(dx, dt)) {
            return v.clone();
        }
        let phi_x = Expr::atom(Atom::Func {
            name: self.phi.to_string(),
            deps: VarDeps::XT,
            dx: 1,
            dt: 0,
        });
        let raw = if dt >= 1 {
            self.c.mul(&phi_x).diff_n(Indep::T, dt - 1).diff_n(Indep::X, dx)
        } else {
            self.v.mul(&phi_x).diff_n(Indep::X, dx - 2)
        };
        let out = self.reduce(&raw).normalize();
        self.memo.borrow_mut().insert((dx, dt), out.clone());
        out
    }

    fn atom_value(&self, a: &Atom) -> Expr {
        match a {
            Atom::Func { name, dx, dt, .. } if name == self.phi => self.jet(*dx, *dt),
            Atom::Comp { name, order, arg } => Expr::atom(Atom::Comp {
                name: name.clone(),
                order: *order,
                arg: Box::new(self.reduce(arg)),
            }),
            Atom::Integral { var, integrand } => Expr::atom(Atom::Integral {
                var: *var,
                integrand: Box::new(self.reduce(integrand)),
            }),
            other => Expr::atom(other.clone()),
        }
    }

    fn needs_rewrite(&self, a: &Atom) -> bool {
        match a {
            Atom::Func { name, dx, dt, .. } => name == self.phi && (*dt > 0 || *dx > 1),
            Atom::Comp { arg, .. } => self.touches(arg),
            Atom::Integral { integrand, .. } => self.touches(integrand),
            _ => false,
        }
    }

    fn touches(&self, e: &Expr) -> bool {
        let mut hit = false;
        e.visit_atoms(&mut |a| hit |= self.needs_rewrite(a));
        hit
    }

    fn reduce(&self, e: &Expr) -> Expr {
        if !self.touches(e) {
            return e.clone();
        }
        let map_poly = |p: &Poly| -> Expr {
            let mut terms = Vec::new();
            for (m, c) in &p.0 {
                let mut term = Expr::from_rat(c.clone());
                for (a, k) in &m.0 {
                    term = term.mul(&self.atom_value(a).pow_i(*k));
                }
                terms.push(term);
            }
            Expr::sum(terms)
        };
        let mut out = map_poly(&e.num);
        for (f, p) in &e.den {
            out = out.div(&map_poly(f).pow_i(*p as i64));
        }
        out
    }
}

/// Eliminates every derivative of φ other than φ_x using φ_t = C·φ_x,
/// φ_xx = V·φ_x, and the total-derivative closure of those two rules.
pub fn manifold_reduce(e: &Expr, phi: &str, c: &Expr, v: &Expr) -> Expr {
    let rules = ManifoldRules {
        phi,
        c,
        v,
        memo: RefCell::new(BTreeMap::new()),
    };
    rules.reduce(e).normalize()
}

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

/// Result of checking a single order of the table after substitution.
#[derive(Debug, Clone)]
pub struct OrderCheck {
    pub order: i64,
    pub zero: bool,
    pub residual: Expr,
}

/// Substitutes coefficient choices into the table and, when C and V are
/// given, applies the manifold rewrite closure; each selected order must
/// reduce to zero. `orders = None` checks the whole table.
pub fn verify_truncation(
    table: &PhiOrderTable,
    coeffs: &Bindings,
    phi: &str,
    cv: Option<(&Expr, &Expr)>,
    orders: Option<&[i64]>,
) -> Vec<OrderCheck> {
    let zero = Expr::zero();
    let selected: Vec<(i64, &Expr)> = match orders {
        // An order absent from the table already collapsed to zero during
        // collection, so an explicit selection may name it anyway.
        Some(sel) => sel
            .iter()
            .map(|k| (*k, table.orders.get(k).unwrap_or(&zero)))
            .collect(),
        None => table.orders.iter().map(|(k, e)| (*k, e)).collect(),
    };
    let mut out = Vec::new();
    for (k, e) in selected {
        let mut r = e.substitute(coeffs).normalize();
        if let Some((c, v)) = cv {
            r = manifold_reduce(&r, phi, c, v);
        }
        out.push(OrderCheck {
            order: k,
            zero: r.is_zero(),
            residual: r,
        });
    }
    out
}

/// Residual of a candidate closed-form solution, normalized; zero means the
/// solution satisfies the equation identically.
pub fn verify_solution(eq: &EvolutionEquation, u: &Expr) -> Expr {
    substitute_field(&eq.residual_poly(), u)
}

// ---------------------------------------------------------------------------
// Case runner
// ---------------------------------------------------------------------------

pub fn run_case(case: &CaseFile) -> Result<CaseOutcome> {
    let tab = case.symtab()?;
    let nonzero = case.nonzero();
    let eq = case.equation(&tab)?;
    let mut notes = Vec::new();
    let mut ok = true;

    // Leading order: computed, then compared to the declared value.
    let declared: u32 = case
        .kv("expansion", "alpha")
        .ok_or_else(|| Error::Case(format!("{}: [expansion] needs `alpha = ...`", case.id)))?
        .parse()
        .map_err(|_| Error::Case(format!("{}: bad alpha", case.id)))?;
    let (alpha, balance) = leading_order(&eq)?;
    let shown: Vec<String> = balance.iter().map(|m| m.to_string()).collect();
    notes.push(format!(
        "leading order: alpha = {alpha}, balancing terms {}",
        shown.join(", ")
    ));
    if alpha != declared {
        ok = false;
        notes.push(format!("leading order mismatch: declared alpha = {declared}"));
    }
    if let Some(want) = case.kv("expansion", "balance") {
        for w in want.split_whitespace() {
            let p = parse_diffpoly(w, &tab)
                .map_err(|e| Error::Case(format!("{}: balance `{w}`: {e}", case.id)))?;
            let mono = p.0.keys().next().cloned().unwrap_or_else(JetMono::unit);
            if !balance.contains(&mono) {
                ok = false;
                notes.push(format!("declared balancing term {w} not in computed set"));
            }
        }
    }

    let phi = case
        .kv("expansion", "phi")
        .unwrap_or_else(|| "phi".to_string());
    let exp = PainleveExpansion::generic(alpha, &phi);
    let table = truncate_and_collect(&eq, &exp)?;
    let (lo, hi) = (
        *table.orders.keys().next().expect("nonempty table"),
        *table.orders.keys().last().expect("nonempty table"),
    );
    notes.push(format!(
        "truncation table: {} orders, exponents {lo}..{hi}",
        table.orders.len()
    ));

    // Expected printed orders, matched up to a unit multiple.
    for l in case.section("table") {
        let (k, expr) = l.text.split_once('|').ok_or_else(|| {
            Error::Case(format!("{}:{}: table entry needs `order | expr`", case.id, l.lineno))
        })?;
        let k: i64 = k
            .trim()
            .parse()
            .map_err(|_| Error::Case(format!("{}:{}: bad order", case.id, l.lineno)))?;
        let expected = parse_expr(expr.trim(), &tab)
            .map_err(|e| Error::Case(format!("{}:{}: {e}", case.id, l.lineno)))?;
        match table.orders.get(&k) {
            Some(got)
                if zcc::is_unit_multiple(got, &expected, &nonzero)
                    || zcc::is_unit_multiple(&expected, got, &nonzero) =>
            {
                notes.push(format!("order {k} matches the printed equation"));
            }
            Some(got) => {
                ok = false;
                notes.push(format!(
                    "order {k} disagrees with the printed equation (line {}); got {got}",
                    l.lineno
                ));
            }
            None => {
                ok = false;
                notes.push(format!("order {k} absent from the truncation table"));
            }
        }
    }

    // Coefficient choices and the order-by-order reduction.
    let mut records = Vec::new();
    if case.has_section("coeffs") {
        let mut coeffs = Bindings::new();
        let mut c_expr = None;
        let mut v_expr = None;
        for (k, vtext, l) in case.kvs("coeffs") {
            let e = parse_expr(&vtext, &tab)
                .map_err(|err| Error::Case(format!("{}:{}: {err}", case.id, l.lineno)))?;
            match k.as_str() {
                "C" => c_expr = Some(e),
                "V" => v_expr = Some(e),
                _ => coeffs.insert_checked(&k, e)?,
            }
        }
        let cv = match (&c_expr, &v_expr) {
            (Some(c), Some(v)) => Some((c, v)),
            (None, None) => None,
            _ => {
                return Err(Error::Case(format!(
                    "{}: [coeffs] must declare both C and V or neither",
                    case.id
                )))
            }
        };
        let orders: Option<Vec<i64>> = match case.kv("verify", "orders") {
            None => None,
            Some(s) if s.trim() == "all" => None,
            Some(s) => Some(
                s.split_whitespace()
                    .map(|w| {
                        w.parse().map_err(|_| {
                            Error::Case(format!("{}: bad order in [verify]", case.id))
                        })
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        let checks = verify_truncation(&table, &coeffs, &phi, cv, orders.as_deref());
        for ch in &checks {
            if ch.zero {
                notes.push(format!("order {}: reduces to zero", ch.order));
            } else {
                ok = false;
                notes.push(format!(
                    "order {}: nonzero residual {}",
                    ch.order, ch.residual
                ));
            }
            records.push(ReportRecord {
                case: case.id.clone(),
                equation_id: records.len(),
                jet_monomial: format!("{phi}^{}", ch.order),
                entry: "-".into(),
                status: if ch.zero {
                    "reduced-to-zero".into()
                } else {
                    "nonzero".into()
                },
                normal_form_digest: zcc::digest(&ch.residual),
            });
        }
    }

    // Closed-form solution check.
    if let Some(sol) = case.kv("solution", "u") {
        let u = parse_expr(&sol, &tab)
            .map_err(|e| Error::Case(format!("{}: [solution]: {e}", case.id)))?;
        let res = verify_solution(&eq, &u);
        let zero = res.is_zero();
        if zero {
            notes.push("closed-form solution: residual vanishes".into());
        } else {
            ok = false;
            notes.push(format!("closed-form solution: nonzero residual {res}"));
        }
        records.push(ReportRecord {
            case: case.id.clone(),
            equation_id: records.len(),
            jet_monomial: "solution".into(),
            entry: "-".into(),
            status: if zero {
                "reduced-to-zero".into()
            } else {
                "nonzero".into()
            },
            normal_form_digest: zcc::digest(&res),
        });
    }

    let reports = vec![Report {
        case: case.id.clone(),
        passed: ok,
        records,
    }];
    Ok(CaseOutcome {
        id: case.id.clone(),
        kind: case.kind.clone(),
        declared_status: case.status.clone(),
        outcome: if ok { Outcome::Pass } else { Outcome::Fail },
        notes,
        reports,
    })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::SymTab;

    fn classical_kdv() -> EvolutionEquation {
        let tab = SymTab::new().with_field("u");
        EvolutionEquation::new("u", parse_diffpoly("-6*u*u_x - u_xxx", &tab).unwrap())
    }

    #[test]
    fn classical_kdv_balances_at_two() {
        let (alpha, balance) = leading_order(&classical_kdv()).unwrap();
        assert_eq!(alpha, 2);
        let shown: Vec<String> = balance.iter().map(|m| m.to_string()).collect();
        assert!(shown.contains(&"u*u_x".to_string()));
        assert!(shown.contains(&"u_xxx".to_string()));
    }

    #[test]
    fn leading_order_ignores_nonzero_coefficient_scaling() {
        let mut tab = SymTab::new().with_field("u");
        tab.func("g", VarDeps::XT);
        let eq = EvolutionEquation::new(
            "u",
            parse_diffpoly("-6*g*u*u_x - g*u_xxx", &tab).unwrap(),
        );
        assert_eq!(leading_order(&eq).unwrap().0, 2);
    }

    #[test]
    fn puiseux_balance_is_detected_not_expanded() {
        let tab = SymTab::new().with_field("u");
        let eq = EvolutionEquation::new("u", parse_diffpoly("u*u_xxxx", &tab).unwrap());
        assert!(matches!(leading_order(&eq), Err(Error::Verify(_))));
    }

    #[test]
    fn zero_coefficients_give_an_empty_table() {
        let eq = classical_kdv();
        let exp = PainleveExpansion {
            alpha: 2,
            coeffs: vec![Expr::zero(), Expr::zero(), Expr::zero()],
            phi: "phi".into(),
        };
        let table = truncate_and_collect(&eq, &exp).unwrap();
        assert!(table.orders.values().all(Expr::is_zero));
    }

    #[test]
    fn table_exponents_span_the_expected_range() {
        let eq = classical_kdv();
        let exp = PainleveExpansion::generic(2, "phi");
        let table = truncate_and_collect(&eq, &exp).unwrap();
        assert_eq!(*table.orders.keys().next().unwrap(), -5);
        assert_eq!(*table.orders.keys().last().unwrap(), 0);
    }

    #[test]
    fn classical_kdv_truncation_kills_the_singular_orders() {
        // The classical truncated expansion u0 = -2 phi_x^2, u1 = 2 phi_xx,
        // u2 = 0 makes the two most singular orders vanish with no condition
        // on phi at all.
        let mut tab = SymTab::new().with_field("u");
        tab.func("phi", VarDeps::XT);
        let eq = classical_kdv();
        let exp = PainleveExpansion {
            alpha: 2,
            coeffs: vec![
                parse_expr("-2*phi_x^2", &tab).unwrap(),
                parse_expr("2*phi_xx", &tab).unwrap(),
                Expr::zero(),
            ],
            phi: "phi".into(),
        };
        let table = truncate_and_collect(&eq, &exp).unwrap();
        let checks = verify_truncation(&table, &Bindings::new(), "phi", None, Some(&[-5, -4]));
        assert_eq!(checks.len(), 2);
        for c in &checks {
            assert!(c.zero, "order {} residual {}", c.order, c.residual);
        }
    }

    #[test]
    fn manifold_rules_compose_through_mixed_jets() {
        let mut tab = SymTab::new().with_field("u");
        tab.func("phi", VarDeps::XT);
        let c = Expr::sym("C");
        let v = Expr::sym("V");
        let e = parse_expr("phi_xt", &tab).unwrap();
        let got = manifold_reduce(&e, "phi", &c, &v);
        let want = parse_expr("C*V*phi_x", &tab).unwrap();
        assert!(got.sub(&want).normalize().is_zero(), "got {got}");
        // phi_xxx -> (V phi_x)_x -> V^2 phi_x for constant V.
        let e = parse_expr("phi_xxx", &tab).unwrap();
        let got = manifold_reduce(&e, "phi", &c, &v);
        let want = parse_expr("V^2*phi_x", &tab).unwrap();
        assert!(got.sub(&want).normalize().is_zero(), "got {got}");
    }

    #[test]
    fn exact_soliton_solves_classical_kdv() {
        // Speed-one soliton of u_t + 6 u u_x + u_xxx = 0 in rational form:
        // u = (1/2) sech^2((x - t)/2) = 2 e^{x-t} / (1 + e^{x-t})^2.
        let tab = SymTab::new().with_field("u");
        let eq = classical_kdv();
        let u = parse_expr("2*exp(x - t)/(1 + exp(x - t))^2", &tab).unwrap();
        let res = verify_solution(&eq, &u);
        assert!(res.is_zero(), "nonzero residual: {res}");
    }

    #[test]
    fn nonzero_solution_residual_is_reported() {
        let tab = SymTab::new().with_field("u");
        let eq = classical_kdv();
        let u = parse_expr("exp(x - t)", &tab).unwrap();
        assert!(!verify_solution(&eq, &u).is_zero());
    }
}
