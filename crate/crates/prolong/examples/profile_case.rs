use std::time::Instant;

use prolong::papercases::{load, CaseFile};
use prolong::zcc;

fn main() {
    let case = load("mkdv1-appA").unwrap();
    let tab = case.symtab().unwrap();
    let eq = case.equation(&tab).unwrap();
    let t0 = Instant::now();
    let u = case.matrix("U", 2, &tab).unwrap();
    let v = case.matrix("V", 2, &tab).unwrap();
    let pre = case.bindings("presub", &tab).unwrap();
    let (u, v) = (u.substitute(&pre), v.substitute(&pre));
    eprintln!("parse+presub: {:?}", t0.elapsed());
    let t1 = Instant::now();
    let r = zcc::zcc_residual(&u, &v, &eq).unwrap();
    eprintln!("residual: {:?}", t1.elapsed());
    let t2 = Instant::now();
    let sys = zcc::extract_determining(&r);
    eprintln!("extract: {:?} ({} eqs)", t2.elapsed(), sys.len());
    let t3 = Instant::now();
    let mut expected = Vec::new();
    for l in case.section("system") {
        expected.push(prolong::parser::parse_expr(&l.text, &tab).unwrap());
    }
    let nonzero = case.nonzero();
    let mut hits = 0;
    for e in &expected {
        if sys.eqs.iter().any(|d| zcc::is_unit_multiple(&d.lhs, e, &nonzero) || zcc::is_unit_multiple(e, &d.lhs, &nonzero)) {
            hits += 1;
        }
    }
    eprintln!("match: {:?} ({hits}/{} expected hit)", t3.elapsed(), expected.len());
    let t4 = Instant::now();
    let subs = case.bindings("subs", &tab).unwrap();
    let targets = case.targets(&tab).unwrap();
    let rep = zcc::verify_constraints(&sys, &subs, &targets, &nonzero, &case.id);
    eprintln!("verify: {:?} passed={}", t4.elapsed(), rep.passed);
    let _ = CaseFile::load(&case.path).unwrap();
}
