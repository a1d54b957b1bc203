use prolong::papercases::{load, run, Outcome};

fn run_expect_pass(id: &str) {
    let case = load(id).expect("case loads");
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

#[test]
fn mkdv_cascade_reproduces_pieces_constraints_and_family() {
    run_expect_pass("mkdv3-ew");
}

#[test]
fn kdv_cascade_reproduces_pieces_constraints_and_family() {
    run_expect_pass("kdv5-ew");
}
