use prolong::papercases::{load, run, Outcome};

fn run_expect_pass(id: &str) {
    let case = load(id).expect("case loads");
    let out = run(&case).expect("case runs");
    if out.outcome != Outcome::Pass {
        for n in &out.notes {
            eprintln!("note: {n}");
        }
        panic!("expected pass, got {}", out.outcome);
    }
    for n in &out.notes {
        eprintln!("note: {n}");
    }
}

#[test]
fn fifth_order_kdv_truncation_and_exponential_solution() {
    run_expect_pass("kdv5-sech");
}

#[test]
fn fifth_order_kdv_second_family_determining_orders() {
    run_expect_pass("kdv5-logphi");
}

#[test]
fn third_order_mkdv_order_table_matches() {
    run_expect_pass("mkdv-coth");
}
