//! Machine-readable corpus of verification cases and their runners.
//!
//! A case file is plain text in the expression grammar with a small sectioned
//! layout. Sections start with `[name]`; lines are `key = value` pairs or
//! bare artifacts, each optionally followed by ` @@ anchor` (a free-text
//! citation/justification string). `#` starts a comment; a trailing `\`
//! continues a line.
//!
//! Common sections:
//! - `[case]`      id, kind (zcc-verify | ew-run | painleve | numcheck |
//!                 expr-diff), status (verified | unverified | known-typo),
//!                 and free-form notes.
//! - `[symbols]`   `field = u`; `funcs = a1 a2 ...` (deps of x and t);
//!                 `funcs.x = F1` / `funcs.t = C K` for restricted deps;
//!                 `gens = X1 X2` (x,t-dependent generators);
//!                 `gens.jets = F : 0` (generator depending on jets up to the
//!                 given x-order); `nonzero = p1 a2 ...`.
//! - `[equation]`  `u_t = rhs` — the evolution equation.
//!
//! Kind `zcc-verify` additionally uses `[ansatz]` (`U11 = ...` ... `V22 =
//! ...`), `[presub]`, `[system]` (expected determining equations), `[subs]`
//! (reduction substitutions) and `[targets]` (`any | expr` or `i,j | expr`).
//!
//! Kind `expr-diff` uses `[printed]` and `[candidate]`, each holding one
//! expression, and reports their term-level difference; it is the honest
//! encoding of suspected typos that cannot be independently re-derived.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::jetalg::EvolutionEquation;
use crate::parser::{parse_diffpoly, parse_expr, SymTab};
use crate::symcore::{Bindings, Expr, VarDeps};
use crate::zcc::{
    self, extract_determining, is_unit_multiple, verify_constraints, DeterminingSystem, MatExpr,
    Report, ResidualTarget,
};

// ---------------------------------------------------------------------------
// Case file model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CaseLine {
    pub text: String,
    pub anchor: Option<String>,
    pub lineno: usize,
}

#[derive(Debug, Clone)]
pub struct CaseFile {
    pub id: String,
    pub kind: String,
    pub status: String,
    pub path: PathBuf,
    sections: Vec<(String, Vec<CaseLine>)>,
}

impl CaseFile {
    pub fn parse(text: &str, path: &Path) -> Result<CaseFile> {
        let mut sections: Vec<(String, Vec<CaseLine>)> = Vec::new();
        let mut pending = String::new();
        let mut pending_start = 0usize;
        for (i, raw) in text.lines().enumerate() {
            let no_comment = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            };
            let line = no_comment.trim_end();
            let joined = if pending.is_empty() {
                pending_start = i + 1;
                line.to_string()
            } else {
                format!("{pending} {}", line.trim_start())
            };
            if let Some(stripped) = joined.strip_suffix('\\') {
                pending = stripped.trim_end().to_string();
                continue;
            }
            pending = String::new();
            let line = joined.trim().to_string();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                sections.push((name.to_string(), Vec::new()));
                continue;
            }
            let (text, anchor) = match line.split_once("@@") {
                Some((t, a)) => (t.trim().to_string(), Some(a.trim().to_string())),
                None => (line, None),
            };
            match sections.last_mut() {
                Some((_, lines)) => lines.push(CaseLine {
                    text,
                    anchor,
                    lineno: pending_start,
                }),
                None => {
                    return Err(Error::Parse {
                        msg: "content before first [section]".into(),
                        line: pending_start,
                        col: 1,
                    })
                }
            }
        }
        let mut cf = CaseFile {
            id: String::new(),
            kind: String::new(),
            status: String::new(),
            path: path.to_path_buf(),
            sections,
        };
        cf.id = cf.kv("case", "id").unwrap_or_default();
        cf.kind = cf.kv("case", "kind").unwrap_or_default();
        cf.status = cf.kv("case", "status").unwrap_or_default();
        if cf.id.is_empty() || cf.kind.is_empty() || cf.status.is_empty() {
            return Err(Error::Case(format!(
                "{}: [case] must declare id, kind, status",
                path.display()
            )));
        }
        Ok(cf)
    }

    pub fn load(path: &Path) -> Result<CaseFile> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Case(format!("{}: {e}", path.display())))?;
        CaseFile::parse(&text, path)
    }

    pub fn section(&self, name: &str) -> Vec<&CaseLine> {
        self.sections
            .iter()
            .filter(|(n, _)| n == name)
            .flat_map(|(_, l)| l)
            .collect()
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.iter().any(|(n, _)| n == name)
    }

    /// First `key = value` in a section.
    pub fn kv(&self, section: &str, key: &str) -> Option<String> {
        for l in self.section(section) {
            if let Some((k, v)) = l.text.split_once('=') {
                if k.trim() == key {
                    return Some(v.trim().to_string());
                }
            }
        }
        None
    }

    /// All `key = value` pairs of a section, in order.
    pub fn kvs(&self, section: &str) -> Vec<(String, String, &CaseLine)> {
        let mut out = Vec::new();
        for l in self.section(section) {
            if let Some((k, v)) = l.text.split_once('=') {
                out.push((k.trim().to_string(), v.trim().to_string(), l));
            }
        }
        out
    }

    /// Builds the symbol table from `[symbols]`.
    pub fn symtab(&self) -> Result<SymTab> {
        let mut tab = SymTab::new();
        for (k, v, l) in self.kvs("symbols") {
            let words = || v.split_whitespace();
            match k.as_str() {
                "field" => tab.field = Some(v.clone()),
                "funcs" => {
                    for w in words() {
                        tab.func(w, VarDeps::XT);
                    }
                }
                "funcs.x" => {
                    for w in words() {
                        tab.func(w, VarDeps::X);
                    }
                }
                "funcs.t" => {
                    for w in words() {
                        tab.func(w, VarDeps::T);
                    }
                }
                "gens" => {
                    for w in words() {
                        tab.gen(w, crate::liealg::GenDeps::XT);
                    }
                }
                "gens.jets" => {
                    let (name, order) = v.split_once(':').ok_or_else(|| Error::Case(format!(
                        "{}:{}: gens.jets expects `name : order`",
                        self.path.display(),
                        l.lineno
                    )))?;
                    let order: u32 = order.trim().parse().map_err(|_| {
                        Error::Case(format!("{}:{}: bad jet order", self.path.display(), l.lineno))
                    })?;
                    tab.gen(name.trim(), crate::liealg::GenDeps::Jets(order));
                }
                "nonzero" => {}
                other => {
                    return Err(Error::Case(format!(
                        "{}:{}: unknown [symbols] key `{other}`",
                        self.path.display(),
                        l.lineno
                    )))
                }
            }
        }
        Ok(tab)
    }

    pub fn nonzero(&self) -> BTreeSet<String> {
        self.kv("symbols", "nonzero")
            .map(|v| v.split_whitespace().map(str::to_string).collect())
            .unwrap_or_default()
    }

    /// Parses `[equation]` (`u_t = rhs`).
    pub fn equation(&self, tab: &SymTab) -> Result<EvolutionEquation> {
        let lines = self.section("equation");
        let l = lines.first().ok_or_else(|| {
            Error::Case(format!("{}: missing [equation]", self.path.display()))
        })?;
        let (lhs, rhs) = l.text.split_once('=').ok_or_else(|| {
            Error::Case(format!("{}:{}: equation needs `u_t = rhs`", self.path.display(), l.lineno))
        })?;
        let lhs = lhs.trim();
        let field = lhs.strip_suffix("_t").ok_or_else(|| {
            Error::Case(format!("{}:{}: equation lhs must be `<field>_t`", self.path.display(), l.lineno))
        })?;
        if Some(field) != tab.field.as_deref() {
            return Err(Error::Case(format!(
                "{}:{}: equation field `{field}` does not match declared field",
                self.path.display(),
                l.lineno
            )));
        }
        Ok(EvolutionEquation::new(field, parse_diffpoly(rhs.trim(), tab)?))
    }

    /// Parses a substitution section into simultaneous bindings.
    pub fn bindings(&self, section: &str, tab: &SymTab) -> Result<Bindings> {
        let mut b = Bindings::new();
        for (k, v, l) in self.kvs(section) {
            let e = parse_expr(&v, tab).map_err(|err| {
                Error::Case(format!("{}:{}: {err}", self.path.display(), l.lineno))
            })?;
            b.insert_checked(&k, e)?;
        }
        Ok(b)
    }

    /// Parses `[ansatz]` entries named like `U11`, `V21` into matrices.
    pub fn matrix(&self, prefix: &str, n: usize, tab: &SymTab) -> Result<MatExpr> {
        let mut m = MatExpr::zero(n);
        let mut found = false;
        for (k, v, l) in self.kvs("ansatz") {
            if let Some(idx) = k.strip_prefix(prefix) {
                let digits: Vec<u32> = idx.chars().filter_map(|c| c.to_digit(10)).collect();
                if digits.len() != 2 || idx.len() != 2 {
                    return Err(Error::Case(format!(
                        "{}:{}: matrix entry `{k}` must be `{prefix}ij`",
                        self.path.display(),
                        l.lineno
                    )));
                }
                let (i, j) = (digits[0] as usize - 1, digits[1] as usize - 1);
                if i >= n || j >= n {
                    return Err(Error::Dimension(n, i.max(j) + 1));
                }
                *m.at_mut(i, j) = parse_diffpoly(&v, tab).map_err(|err| {
                    Error::Case(format!("{}:{}: {err}", self.path.display(), l.lineno))
                })?;
                found = true;
            }
        }
        if !found {
            return Err(Error::Case(format!(
                "{}: no `{prefix}ij` entries in [ansatz]",
                self.path.display()
            )));
        }
        Ok(m)
    }

    /// Parses `[targets]`: `any | expr` or `i,j | expr`.
    pub fn targets(&self, tab: &SymTab) -> Result<Vec<ResidualTarget>> {
        let mut out = Vec::new();
        for l in self.section("targets") {
            let (pos, expr) = l.text.split_once('|').ok_or_else(|| {
                Error::Case(format!(
                    "{}:{}: target needs `any | expr` or `i,j | expr`",
                    self.path.display(),
                    l.lineno
                ))
            })?;
            let pos = pos.trim();
            let entry = if pos == "any" {
                None
            } else {
                let (i, j) = pos.split_once(',').ok_or_else(|| {
                    Error::Case(format!("{}:{}: bad target position", self.path.display(), l.lineno))
                })?;
                Some((
                    i.trim().parse::<usize>().map_err(|_| Error::Case("bad target row".into()))?,
                    j.trim().parse::<usize>().map_err(|_| Error::Case("bad target column".into()))?,
                ))
            };
            out.push(ResidualTarget {
                entry,
                expr: parse_expr(expr.trim(), tab).map_err(|err| {
                    Error::Case(format!("{}:{}: {err}", self.path.display(), l.lineno))
                })?,
            });
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Outcomes
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Unverified,
    Fail,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Pass => write!(f, "pass"),
            Outcome::Unverified => write!(f, "unverified"),
            Outcome::Fail => write!(f, "fail"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseOutcome {
    pub id: String,
    pub kind: String,
    pub declared_status: String,
    pub outcome: Outcome,
    pub notes: Vec<String>,
    pub reports: Vec<Report>,
}

impl CaseOutcome {
    /// A run is acceptable when a `verified` case passes, or when an
    /// `unverified`/`known-typo` case terminates as unverified (a declared
    /// discrepancy that silently became a pass is also flagged).
    pub fn acceptable(&self) -> bool {
        match self.declared_status.as_str() {
            "verified" => self.outcome == Outcome::Pass,
            _ => self.outcome == Outcome::Unverified,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case outcome serialization")
    }

    pub fn summary(&self) -> String {
        format!("{} [{}] -> {}", self.id, self.kind, self.outcome)
    }
}

// ---------------------------------------------------------------------------
// Runners
// ---------------------------------------------------------------------------

/// Default case directory (the `cases/` folder next to the crate manifest).
pub fn default_case_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("cases")
}

pub fn load(id: &str) -> Result<CaseFile> {
    CaseFile::load(&default_case_dir().join(format!("{id}.case")))
}

pub fn list_ids() -> Result<Vec<String>> {
    let mut ids = Vec::new();
    let dir = default_case_dir();
    for entry in std::fs::read_dir(&dir).map_err(|e| Error::Case(format!("{}: {e}", dir.display())))? {
        let p = entry.map_err(|e| Error::Case(e.to_string()))?.path();
        if p.extension().is_some_and(|e| e == "case") {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn run(case: &CaseFile) -> Result<CaseOutcome> {
    match case.kind.as_str() {
        "zcc-verify" => run_zcc_verify(case),
        "expr-diff" => run_expr_diff(case),
        "ew-run" => crate::ew::run_case(case),
        "painleve" => crate::painleve::run_case(case),
        "numcheck" => crate::numlab::run_case(case),
        "zero-test" => crate::numlab::run_zero_test_case(case),
        other => Err(Error::Case(format!("{}: unknown case kind `{other}`", case.id))),
    }
}

/// Matches a generated determining system against the expected list: every
/// expected equation must be a unit multiple of a generated one and vice
/// versa.
fn match_system(
    sys: &DeterminingSystem,
    expected: &[(Expr, CaseLine)],
    nonzero: &BTreeSet<String>,
    notes: &mut Vec<String>,
) -> bool {
    let mut ok = true;
    for (e, line) in expected {
        let hit = sys
            .eqs
            .iter()
            .any(|d| is_unit_multiple(&d.lhs, e, nonzero) || is_unit_multiple(e, &d.lhs, nonzero));
        if !hit {
            ok = false;
            notes.push(format!(
                "expected equation missing from generated system (line {}): {}",
                line.lineno, line.text
            ));
        }
    }
    for d in &sys.eqs {
        let hit = expected.iter().any(|(e, _)| {
            is_unit_multiple(&d.lhs, e, nonzero) || is_unit_multiple(e, &d.lhs, nonzero)
        });
        if !hit {
            ok = false;
            notes.push(format!(
                "generated equation not in expected list (entry ({},{}), jet {}): {}",
                d.entry.0, d.entry.1, d.jet, d.lhs
            ));
        }
    }
    notes.push(format!(
        "system match: {} generated, {} expected",
        sys.len(),
        expected.len()
    ));
    ok
}

fn run_zcc_verify(case: &CaseFile) -> Result<CaseOutcome> {
    let tab = case.symtab()?;
    let nonzero = case.nonzero();
    let eq = case.equation(&tab)?;
    let u = case.matrix("U", 2, &tab)?;
    let v = case.matrix("V", 2, &tab)?;
    let (u, v) = if case.has_section("presub") {
        let pre = case.bindings("presub", &tab)?;
        (u.substitute(&pre), v.substitute(&pre))
    } else {
        (u, v)
    };
    let residual = zcc::zcc_residual(&u, &v, &eq)?;
    let sys = extract_determining(&residual);

    let mut notes = Vec::new();
    let mut ok = true;
    if case.has_section("system") {
        let mut expected = Vec::new();
        for l in case.section("system") {
            let e = parse_expr(&l.text, &tab).map_err(|err| {
                Error::Case(format!("{}:{}: {err}", case.path.display(), l.lineno))
            })?;
            expected.push((e, l.clone()));
        }
        ok &= match_system(&sys, &expected, &nonzero, &mut notes);
    }

    let mut reports = Vec::new();
    if case.has_section("subs") {
        let subs = case.bindings("subs", &tab)?;
        let targets = case.targets(&tab)?;
        let report = verify_constraints(&sys, &subs, &targets, &nonzero, &case.id);
        ok &= report.passed;
        reports.push(report);
    }

    Ok(CaseOutcome {
        id: case.id.clone(),
        kind: case.kind.clone(),
        declared_status: case.status.clone(),
        outcome: if ok { Outcome::Pass } else { Outcome::Fail },
        notes,
        reports,
    })
}

fn run_expr_diff(case: &CaseFile) -> Result<CaseOutcome> {
    let tab = case.symtab()?;
    let one = |section: &str| -> Result<Expr> {
        let lines = case.section(section);
        let l = lines.first().ok_or_else(|| {
            Error::Case(format!("{}: missing [{section}]", case.path.display()))
        })?;
        parse_expr(&l.text, &tab)
            .map_err(|err| Error::Case(format!("{}:{}: {err}", case.path.display(), l.lineno)))
    };
    let printed = one("printed")?;
    let candidate = one("candidate")?;
    let diff = printed.sub(&candidate).normalize();
    let mut notes = Vec::new();
    let outcome = if diff.is_zero() {
        notes.push("printed and candidate forms agree exactly".into());
        Outcome::Pass
    } else {
        notes.push(format!(
            "term-level difference (printed - candidate), {} terms:",
            diff.num.num_terms()
        ));
        for (m, c) in diff.num.0.iter().take(40) {
            let mut p = crate::symcore::Poly::zero();
            p.add_term(m.clone(), c.clone());
            notes.push(format!("  {}", Expr::from_poly(p)));
        }
        if !diff.den.is_empty() {
            notes.push(format!("  (over denominator {})", diff));
        }
        Outcome::Unverified
    };
    Ok(CaseOutcome {
        id: case.id.clone(),
        kind: case.kind.clone(),
        declared_status: case.status.clone(),
        outcome,
        notes,
        reports: Vec::new(),
    })
}
