//! Times the family substitution of the heaviest KdV determining equation
//! piece by piece to find the hot spot.

use prolong::parser::{parse_expr, SymTab};
use prolong::symcore::{Bindings, Indep, SubstCache, VarDeps};

fn main() {
    let mut tab = SymTab::new().with_field("u");
    for a in [
        "a1", "a2", "a3", "a4", "a5", "a6", "a7", "a8", "f1", "f2", "f3", "f4", "g1", "g2",
        "g3", "g4",
    ] {
        tab.func(a, VarDeps::XT);
    }
    for f in [
        "F1", "F2", "F3", "F5", "F6", "F7", "F8", "F9", "F10", "G1", "G4",
    ] {
        tab.func(f, VarDeps::T);
    }
    tab.func("II", VarDeps::XT);
    let mut fam = Bindings::new();
    let binds = [
        ("a2", "-(3*F1 - 1 - 3*F2*x)*a1/(F2*x - F1)"),
        ("a3", "F5*a1/(F2*x - F1)"),
        ("a4", "F6*a1/(F2*x - F1)"),
        (
            "a6",
            if std::env::var("SIMPLE_A6").is_ok() {
                "(a1/(F2*x - F1))*(F7 + F8*x + F9*x^2 - II)"
            } else {
                "(a1/(F2*x - F1))*(F7 + F8*x + F9*x^2 - Int_x(Int_x(a5*(F2*x - F1)/a1)))"
            },
        ),
        (
            "a7",
            "(a1/((F2*x - F1)*F3))*Dt(F3*(F2*x - F1)/a1) \
             + (a1/(F2*x - F1))*Dx(a8*(F2*x - F1)/a1) + G4 - G1",
        ),
        ("f3", "F3*(F2*x - F1)/a1"),
        ("f4", "c1*F3*exp(2*Int_t(G4 - G1))*(F2*x - F1)/a1"),
        ("f2", "f1*c1*exp(2*Int_t(G4 - G1))"),
        ("g1", "G1"),
        ("g4", "G4"),
        ("g2", "Int_x(f1_t + f1*(G4 - G1)) + F10"),
        ("g3", "c1*exp(2*Int_t(G4 - G1))*(Int_x(f1_t + f1*(G4 - G1)) + F10)"),
    ];
    for (n, e) in binds {
        fam.insert(n, parse_expr(e, &tab).unwrap());
    }

    let cache = SubstCache::new();
    let time = |label: &str, f: &mut dyn FnMut() -> prolong::symcore::Expr| {
        let t0 = std::time::Instant::now();
        let r = f();
        println!(
            "{label}: {} terms, {:.2}s",
            r.num_terms(),
            t0.elapsed().as_secs_f64()
        );
        r
    };

    let q = parse_expr("a2 - 3*a1", &tab).unwrap();
    let qs = time("q subst", &mut || q.substitute_shared(&fam, &cache).normalize());

    let a6q = parse_expr("a6/(a2 - 3*a1)", &tab).unwrap();
    let mut cur = time("a6/q subst", &mut || {
        a6q.substitute_shared(&fam, &cache).normalize()
    });
    for i in 1..=5 {
        cur = time(&format!("d^{i}"), &mut || cur.diff(Indep::X).normalize());
    }
    let part1 = time("q * d^5", &mut || qs.mul(&cur).normalize());

    // Now the other route: substitute into the parsed Dxxxxx form directly.
    let s1 = parse_expr(
        "(a2 - 3*a1)*(Dxxxxx(a6/(a2 - 3*a1)) + Dxxx(a5/(a2 - 3*a1)) \
         + Dx(a8/(a2 - 3*a1))) - a7",
        &tab,
    )
    .unwrap();
    println!("S1 parsed: {} terms", s1.num_terms());
    let s1s = time("S1 subst", &mut || {
        s1.substitute_shared(&fam, &cache).normalize()
    });

    // Break the substitution into its parts: per-monomial products, the
    // grouped sum, and the final reduction.
    {
        use prolong::symcore::Expr;
        let t0 = std::time::Instant::now();
        let mut parts: Vec<Expr> = Vec::new();
        for (m, c) in &s1.num.0 {
            let mono = Expr::from_poly(prolong::symcore::Poly(
                [(m.clone(), c.clone())].into_iter().collect(),
            ));
            parts.push(mono.substitute_shared(&fam, &cache));
        }
        println!(
            "  per-monomial products: {} parts, {:.2}s, sizes max {}",
            parts.len(),
            t0.elapsed().as_secs_f64(),
            parts.iter().map(|p| p.num_terms()).max().unwrap_or(0)
        );
        let t0 = std::time::Instant::now();
        let total = Expr::sum(parts);
        println!(
            "  grouped sum: {} terms, {:.2}s",
            total.num_terms(),
            t0.elapsed().as_secs_f64()
        );
        let t0 = std::time::Instant::now();
        let mut denexp = Expr::one();
        for (f, p) in &s1.den {
            let rf = Expr::from_poly(f.clone()).substitute_shared(&fam, &cache);
            denexp = denexp.mul(&rf.pow_i(*p as i64));
        }
        let fin = total.div(&denexp);
        println!(
            "  den divide: {} terms, {:.2}s",
            fin.num_terms(),
            t0.elapsed().as_secs_f64()
        );
    }
    let _ = part1;

    let f3 = parse_expr("f3", &tab).unwrap();
    let f3s = f3.substitute_shared(&fam, &cache);
    let prod = time("S1*f3", &mut || s1s.mul(&f3s).normalize());

    let rest = parse_expr("f3_t + f3*(g4 - g1)", &tab).unwrap();
    let rests = time("rest subst", &mut || {
        rest.substitute_shared(&fam, &cache).normalize()
    });
    let total = time("sum", &mut || prod.add(&rests).normalize());
    println!("zero: {}", total.is_zero());
}
