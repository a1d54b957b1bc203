use prolong::papercases::{load, run, Outcome};

#[test]
fn third_order_mkdv_system_regenerates_and_reduces() {
    let case = load("mkdv1-appA").expect("case loads");
    let out = run(&case).expect("case runs");
    if out.outcome != Outcome::Pass {
        for n in &out.notes {
            eprintln!("note: {n}");
        }
        for r in &out.reports {
            eprintln!("{}", r.to_json());
        }
        panic!("expected pass, got {}", out.outcome);
    }
}

#[test]
fn fifth_order_kdv_system_regenerates_and_reduces() {
    let case = load("kdv5-appB").expect("case loads");
    let out = run(&case).expect("case runs");
    if out.outcome != Outcome::Pass {
        for n in &out.notes {
            eprintln!("note: {n}");
        }
        for r in &out.reports {
            for rec in &r.records {
                if !(rec.status == "satisfied" || rec.status.starts_with("reduced-to")) {
                    eprintln!("{} {} {}", rec.entry, rec.jet_monomial, rec.status);
                }
            }
        }
        panic!("expected pass, got {}", out.outcome);
    }
}
