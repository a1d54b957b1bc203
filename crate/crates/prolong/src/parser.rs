//! Text grammar for expressions, differential polynomials, and generator
//! expressions. One recursive-descent parser covers all three layers; a
//! symbol table decides whether an identifier is an opaque coefficient
//! function, a jet of the unknown field, a generator, or a named constant.
//!
//! Grammar (EBNF):
//! ```text
//! expr     := term { ("+" | "-") term }
//! term     := unary { ("*" | "/") unary }
//! unary    := "-" unary | power
//! power    := primary [ "^" integer ]
//! primary  := integer
//!           | "(" expr ")"
//!           | "[" expr "," expr "]"                 (commutator)
//!           | ident
//! integer  := [ "-" ] digit { digit }
//! ident    := name { "'" } [ "(" expr { "," expr } ")" ]
//! name     := letter { letter | digit } [ "_" jetsuffix ]
//! ```
//! Identifier forms:
//! - `f_xxt`          derivative suffix on an opaque function or generator
//! - `u`, `u_xx`      jets of the declared field
//! - `F'(w)`          composite-argument function derivative (primes)
//! - `D[f,x,2,t,1]`   explicit multi-index derivative of an opaque function
//! - `D[F,2](w)`      explicit order for a composite-argument function
//! - `Dx(e)`, `Dxxt(e)` total derivative operators applied to `e`
//! - `Int_x(e)`, `Int_t(e)` formal integrals
//! Rationals are written `p/q` (the division operator on constants).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::jetalg::{DiffPoly, JetVar};
use crate::liealg::{Gen, GenDeps, NCExpr, Slot};
use crate::symcore::{Atom, Expr, Indep, VarDeps};

/// Symbol table steering identifier classification.
#[derive(Debug, Clone, Default)]
pub struct SymTab {
    /// Name of the unknown field whose jets may appear (e.g. "u" or "v").
    pub field: Option<String>,
    /// Opaque (x,t)-slot coefficient functions.
    pub funcs: BTreeMap<String, VarDeps>,
    /// Generator-valued unknowns.
    pub gens: BTreeMap<String, GenDeps>,
}

impl SymTab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_field(mut self, f: &str) -> Self {
        self.field = Some(f.to_string());
        self
    }

    pub fn func(&mut self, name: &str, deps: VarDeps) -> &mut Self {
        self.funcs.insert(name.to_string(), deps);
        self
    }

    pub fn gen(&mut self, name: &str, deps: GenDeps) -> &mut Self {
        self.gens.insert(name.to_string(), deps);
        self
    }

    fn field_char(&self) -> Option<char> {
        self.field.as_ref().and_then(|f| {
            if f.len() == 1 {
                f.chars().next()
            } else {
                None
            }
        })
    }
}

/// The parser's universal value: jet polynomial with free-algebra
/// coefficients. Scalar and jet-only results are extracted afterwards.
pub type Val = DiffPoly<NCExpr>;

pub fn parse_val(text: &str, tab: &SymTab) -> Result<Val> {
    let mut p = Parser::new(text, tab);
    let v = p.expr()?;
    p.skip_ws();
    if p.pos < p.chars.len() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(v)
}

/// Parses a scalar expression (no jets, no generators allowed).
pub fn parse_expr(text: &str, tab: &SymTab) -> Result<Expr> {
    let v = parse_val(text, tab)?;
    val_to_expr(&v).ok_or_else(|| Error::Parse {
        msg: format!("expected a scalar expression, found jets or generators in `{text}`"),
        line: 1,
        col: 1,
    })
}

/// Parses a differential polynomial with scalar coefficients.
pub fn parse_diffpoly(text: &str, tab: &SymTab) -> Result<DiffPoly<Expr>> {
    let v = parse_val(text, tab)?;
    val_to_scalar_poly(&v).ok_or_else(|| Error::Parse {
        msg: format!("expected scalar coefficients, found generators in `{text}`"),
        line: 1,
        col: 1,
    })
}

/// Parses a generator expression (jets allowed as commuting scalars are not;
/// the value must be jet-free).
pub fn parse_nc(text: &str, tab: &SymTab) -> Result<NCExpr> {
    let v = parse_val(text, tab)?;
    val_to_nc(&v).ok_or_else(|| Error::Parse {
        msg: format!("expected a jet-free generator expression in `{text}`"),
        line: 1,
        col: 1,
    })
}

pub fn val_to_expr(v: &Val) -> Option<Expr> {
    let nc = val_to_nc(v)?;
    if nc.is_zero() {
        return Some(Expr::zero());
    }
    if nc.0.len() == 1 {
        if let Some(c) = nc.0.get(&Vec::new()) {
            return Some(c.clone());
        }
    }
    None
}

pub fn val_to_scalar_poly(v: &Val) -> Option<DiffPoly<Expr>> {
    let mut out = DiffPoly::zero();
    for (m, c) in &v.0 {
        if c.is_zero() {
            continue;
        }
        if c.0.len() == 1 {
            if let Some(e) = c.0.get(&Vec::new()) {
                out.add_term(m.clone(), e.clone());
                continue;
            }
        }
        return None;
    }
    Some(out)
}

pub fn val_to_nc(v: &Val) -> Option<NCExpr> {
    if v.is_zero() {
        return Some(NCExpr::zero());
    }
    if v.0.len() == 1 {
        if let Some(c) = v.0.get(&crate::jetalg::JetMono::unit()) {
            return Some(c.clone());
        }
    }
    None
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    tab: &'a SymTab,
}

impl<'a> Parser<'a> {
    fn new(text: &str, tab: &'a SymTab) -> Self {
        Parser {
            chars: text.chars().collect(),
            pos: 0,
            tab,
        }
    }

    fn err(&self, msg: &str) -> Error {
        let consumed: String = self.chars[..self.pos].iter().collect();
        let line = consumed.matches('\n').count() + 1;
        let col = consumed
            .rsplit('\n')
            .next()
            .map(|s| s.chars().count())
            .unwrap_or(0)
            + 1;
        Error::Parse {
            msg: msg.to_string(),
            line,
            col,
        }
    }

    fn skip_ws(&mut self) {
        while self
            .chars
            .get(self.pos)
            .is_some_and(|c| c.is_whitespace())
        {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(&format!("expected `{c}`")))
        }
    }

    fn expr(&mut self) -> Result<Val> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some('+') => {
                    self.pos += 1;
                    acc = acc.add(&self.term()?);
                }
                Some('-') => {
                    self.pos += 1;
                    acc = acc.sub(&self.term()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Val> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some('*') => {
                    self.pos += 1;
                    acc = acc.mul(&self.unary()?);
                }
                Some('/') => {
                    self.pos += 1;
                    let d = self.unary()?;
                    let de = val_to_expr(&d)
                        .ok_or_else(|| self.err("divisor must be a scalar expression"))?;
                    if de.is_zero() {
                        return Err(self.err("division by zero"));
                    }
                    acc = acc.mul_expr(&de.recip());
                }
                _ => return Ok(acc),
            }
        }
    }

    fn unary(&mut self) -> Result<Val> {
        if self.eat('-') {
            Ok(self.unary()?.neg())
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Val> {
        let base = self.primary()?;
        if !self.eat('^') {
            return Ok(base);
        }
        let k = self.integer()?;
        if k >= 0 {
            let mut out = Val::constant(NCExpr::one());
            for _ in 0..k {
                out = out.mul(&base);
            }
            Ok(out)
        } else {
            let e = val_to_expr(&base)
                .ok_or_else(|| self.err("negative powers need a scalar base"))?;
            Ok(Val::constant(NCExpr::scalar(e.pow_i(k))))
        }
    }

    fn integer(&mut self) -> Result<i64> {
        self.skip_ws();
        let neg = if self.eat('(') {
            let k = self.integer()?;
            self.expect(')')?;
            return Ok(k);
        } else {
            self.eat('-')
        };
        self.skip_ws();
        let start = self.pos;
        while self
            .chars
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_digit())
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected an integer"));
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        let v: i64 = s.parse().map_err(|_| self.err("integer out of range"))?;
        Ok(if neg { -v } else { v })
    }

    fn primary(&mut self) -> Result<Val> {
        match self.peek() {
            Some(c) if c.is_ascii_digit() => {
                let k = self.integer()?;
                Ok(Val::constant(NCExpr::scalar(Expr::from_int(k))))
            }
            Some('(') => {
                self.pos += 1;
                let v = self.expr()?;
                self.expect(')')?;
                Ok(v)
            }
            Some('[') => {
                self.pos += 1;
                let a = self.expr()?;
                self.expect(',')?;
                let b = self.expr()?;
                self.expect(']')?;
                Ok(a.mul(&b).sub(&b.mul(&a)))
            }
            Some(c) if c.is_alphabetic() => self.identifier(),
            _ => Err(self.err("expected a number, identifier, `(` or `[`")),
        }
    }

    fn raw_name(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while self
            .chars
            .get(self.pos)
            .is_some_and(|c| c.is_alphanumeric() || *c == '_')
        {
            self.pos += 1;
        }
        self.chars[start..self.pos].iter().collect()
    }

    fn identifier(&mut self) -> Result<Val> {
        let save = self.pos;
        let word = self.raw_name();
        // Total-derivative operators: Dx(...), Dxt(...), Dxx(...).
        if word.len() >= 2
            && word.starts_with('D')
            && word[1..].chars().all(|c| c == 'x' || c == 't')
            && self.peek() == Some('(')
        {
            self.pos += 1;
            let mut v = self.expr()?;
            self.expect(')')?;
            for c in word[1..].chars() {
                v = match c {
                    'x' => v.total_x(),
                    _ => v.total_t(),
                };
            }
            return Ok(v);
        }
        // Explicit derivative: D[f,x,2,t,1] or D[F,2](arg).
        if word == "D" && self.peek() == Some('[') {
            self.pos = save;
            return self.explicit_derivative();
        }
        // Formal integrals.
        if word == "Int_x" || word == "Int_t" {
            let var = if word.ends_with('x') { Indep::X } else { Indep::T };
            self.expect('(')?;
            let v = self.expr()?;
            self.expect(')')?;
            let e = val_to_expr(&v)
                .ok_or_else(|| self.err("integrand must be a scalar expression"))?;
            return Ok(Val::constant(NCExpr::scalar(Expr::integral(var, e))));
        }
        // Split derivative suffix.
        let (base, suffix) = split_suffix(&word, self.tab);
        // Primes (composite derivative order).
        let mut primes = 0u32;
        while self.peek() == Some('\'') {
            self.pos += 1;
            primes += 1;
        }
        // Function application.
        let args = if self.peek() == Some('(') {
            self.pos += 1;
            let mut args = vec![self.expr()?];
            while self.eat(',') {
                args.push(self.expr()?);
            }
            self.expect(')')?;
            Some(args)
        } else {
            None
        };
        self.build_ident(&base, &suffix, primes, args)
    }

    fn explicit_derivative(&mut self) -> Result<Val> {
        let d = self.raw_name();
        debug_assert_eq!(d, "D");
        self.expect('[')?;
        let name = self.raw_name();
        let mut dx = 0u32;
        let mut dt = 0u32;
        let mut comp_order: Option<u32> = None;
        while self.eat(',') {
            match self.peek() {
                Some('x') | Some('t') => {
                    let v = self.raw_name();
                    self.expect(',')?;
                    let k = self.integer()? as u32;
                    if v == "x" {
                        dx += k;
                    } else if v == "t" {
                        dt += k;
                    } else {
                        return Err(self.err("expected `x` or `t` in D[...]"));
                    }
                }
                _ => {
                    comp_order = Some(self.integer()? as u32);
                }
            }
        }
        self.expect(']')?;
        if let Some(order) = comp_order {
            self.expect('(')?;
            let arg = self.expr()?;
            self.expect(')')?;
            let a = val_to_expr(&arg).ok_or_else(|| self.err("composite argument must be scalar"))?;
            return Ok(Val::constant(NCExpr::scalar(Expr::atom(Atom::Comp {
                name,
                order,
                arg: Box::new(a),
            }))));
        }
        let mut suffix = String::new();
        suffix.push_str(&"x".repeat(dx as usize));
        suffix.push_str(&"t".repeat(dt as usize));
        self.build_ident(&name, &suffix, 0, None)
    }

    fn build_ident(
        &mut self,
        base: &str,
        suffix: &str,
        primes: u32,
        args: Option<Vec<Val>>,
    ) -> Result<Val> {
        let field_char = self.tab.field_char();
        let count = |c: char| suffix.chars().filter(|&s| s == c).count() as u32;
        let dx = count('x');
        let dt = count('t');
        let dfield = field_char.map(count).unwrap_or(0);

        // Jets of the unknown field.
        if Some(base) == self.tab.field.as_deref() {
            if dt > 0 || dx > 0 {
                if dfield > 0 {
                    return Err(self.err("malformed jet suffix"));
                }
                return Ok(Val::jet(JetVar::new(dx, dt)));
            }
            if suffix.is_empty() {
                return Ok(Val::jet(JetVar::base()));
            }
        }

        // Generators.
        if let Some(deps) = self.tab.gens.get(base) {
            let mut g = Gen::new(base, *deps);
            g.dx = dx;
            g.dt = dt;
            for _ in 0..dfield {
                g = g
                    .deriv(Slot::U(0))
                    .ok_or_else(|| self.err(&format!("generator `{base}` does not depend on the field")))?;
            }
            return Ok(Val::constant(NCExpr::gen(g)));
        }

        // Composite application: declared composite or any application whose
        // argument is not the literal pair (x,t).
        if let Some(args) = args {
            let is_xt_pair = args.len() == 2
                && val_to_expr(&args[0]).is_some_and(|e| e == Expr::var(Indep::X))
                && val_to_expr(&args[1]).is_some_and(|e| e == Expr::var(Indep::T));
            if is_xt_pair && primes == 0 {
                let deps = self.tab.funcs.get(base).copied().unwrap_or(VarDeps::XT);
                return Ok(Val::constant(NCExpr::scalar(Expr::atom(Atom::Func {
                    name: base.to_string(),
                    deps,
                    dx,
                    dt,
                }))));
            }
            if args.len() != 1 {
                return Err(self.err(&format!(
                    "function `{base}` applied to {} arguments; expected (x,t) or one composite argument",
                    args.len()
                )));
            }
            let a = val_to_expr(&args[0])
                .ok_or_else(|| self.err("composite argument must be a scalar expression"))?;
            return Ok(Val::constant(NCExpr::scalar(Expr::atom(Atom::Comp {
                name: base.to_string(),
                order: primes,
                arg: Box::new(a),
            }))));
        }

        if primes > 0 {
            return Err(self.err("derivative primes require a composite argument"));
        }

        // Bare identifiers: independent variables, declared opaque
        // functions, otherwise named constants.
        if suffix.is_empty() {
            match base {
                "x" => return Ok(Val::constant(NCExpr::scalar(Expr::var(Indep::X)))),
                "t" => return Ok(Val::constant(NCExpr::scalar(Expr::var(Indep::T)))),
                _ => {}
            }
            if let Some(deps) = self.tab.funcs.get(base) {
                return Ok(Val::constant(NCExpr::scalar(Expr::atom(Atom::Func {
                    name: base.to_string(),
                    deps: *deps,
                    dx: 0,
                    dt: 0,
                }))));
            }
            return Ok(Val::constant(NCExpr::scalar(Expr::sym(base))));
        }
        if dfield > 0 {
            return Err(self.err(&format!(
                "`{base}` carries a field-derivative suffix but is not a generator"
            )));
        }
        let deps = self.tab.funcs.get(base).copied().unwrap_or(VarDeps::XT);
        if !suffix.chars().all(|c| c == 'x' || c == 't') {
            return Err(self.err(&format!("unknown derivative suffix `_{suffix}` on `{base}`")));
        }
        Ok(Val::constant(NCExpr::scalar(Expr::atom(Atom::Func {
            name: base.to_string(),
            deps,
            dx,
            dt,
        }))))
    }
}

/// Splits `name_sfx` where sfx consists of x/t/field letters. Declared names
/// containing underscores are not split if they resolve as a whole.
fn split_suffix(word: &str, tab: &SymTab) -> (String, String) {
    if tab.funcs.contains_key(word) || tab.gens.contains_key(word) {
        return (word.to_string(), String::new());
    }
    let field_char = tab.field_char();
    if let Some((base, sfx)) = word.split_once('_') {
        let ok = !sfx.is_empty()
            && sfx
                .chars()
                .all(|c| c == 'x' || c == 't' || Some(c) == field_char);
        if ok {
            return (base.to_string(), sfx.to_string());
        }
    }
    (word.to_string(), String::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jetalg::JetMono;

    fn tab() -> SymTab {
        let mut t = SymTab::new().with_field("v");
        t.func("b1", VarDeps::XT);
        t.func("b2", VarDeps::XT);
        t.func("F1", VarDeps::X);
        t.func("F2", VarDeps::T);
        t.gen("X1", GenDeps::XT);
        t.gen("X2", GenDeps::XT);
        t.gen("F", GenDeps::Jets(0));
        t
    }

    #[test]
    fn parses_rational_and_symbol() {
        let t = tab();
        let e = parse_expr("3/4*c1 - 1/4*c1", &t).unwrap();
        assert!(e.sub(&Expr::sym("c1").scale(&crate::symcore::rat(1, 2))).is_zero());
    }

    #[test]
    fn parses_jets_and_functions() {
        let t = tab();
        let p = parse_diffpoly("-b1*v_xxx - b2*v^2*v_x", &t).unwrap();
        assert_eq!(p.max_x_order(), Some(3));
        let coeff = p.0.get(&JetMono::var(JetVar::new(3, 0))).unwrap();
        assert!(coeff.add(&Expr::func("b1", VarDeps::XT)).is_zero());
    }

    #[test]
    fn parses_derivative_suffix_and_dop() {
        let t = tab();
        let a = parse_expr("b1_xt", &t).unwrap();
        let b = parse_expr("Dt(Dx(b1))", &t).unwrap();
        assert!(a.sub(&b).is_zero());
        let c = parse_expr("D[b1,x,1,t,1]", &t).unwrap();
        assert!(a.sub(&c).is_zero());
    }

    #[test]
    fn respects_declared_variable_dependence() {
        let t = tab();
        let e = parse_expr("Dt(F1) + Dx(F2)", &t).unwrap();
        assert!(e.is_zero());
    }

    #[test]
    fn parses_commutators_and_generators() {
        let t = tab();
        let e = parse_nc("[X1,X2] + [X2,X1]", &t).unwrap();
        assert!(e.is_zero());
        let k = parse_nc("b1*[F,F_v]", &t).unwrap();
        assert!(!k.is_zero());
    }

    #[test]
    fn parses_gen_derivative_suffix() {
        let t = tab();
        let e = parse_nc("X1_t - X1_t", &t).unwrap();
        assert!(e.is_zero());
        let f = parse_nc("F_vv", &t).unwrap();
        let mut g = Gen::new("F", GenDeps::Jets(0));
        g.du = vec![2];
        assert_eq!(f, NCExpr::gen(g));
    }

    #[test]
    fn parses_composite_and_integral() {
        let t = tab();
        let e = parse_expr("exp(x + C*t)", &t).unwrap();
        let d = e.diff(Indep::X);
        assert!(d.sub(&e).is_zero());
        let i = parse_expr("Int_t(G0)", &t).unwrap();
        assert!(i.diff(Indep::X).is_zero());
    }

    #[test]
    fn total_derivative_of_jet_value() {
        let t = tab();
        let p = parse_val("Dx(b1*v)", &t).unwrap();
        let q = parse_val("b1_x*v + b1*v_x", &t).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn display_reparses() {
        let t = tab();
        let e = parse_expr("6*a1*a2_x^3 - 6*a1*a2*a2_x*a2_xx + a2^2*a2_x*a1_xx", &t).unwrap();
        let s = format!("{e}");
        let e2 = parse_expr(&s, &t).unwrap();
        assert!(e.sub(&e2).is_zero());
    }

    #[test]
    fn negative_powers_parse() {
        let t = tab();
        let e = parse_expr("K_t/K - K_t*K^-1", &t).unwrap();
        assert!(e.is_zero());
    }
}
