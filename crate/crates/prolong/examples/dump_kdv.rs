//! Prints every artifact of the fifth-order KdV prolongation cascade, for
//! eyeballing while writing the case file.

use prolong::ew::{
    apply_rewrites, run_cascade, AnsatzSpec, BranchAction, RewriteRule,
};
use prolong::jetalg::EvolutionEquation;
use prolong::liealg::{nc_normalize, BracketTable, GenDeps};
use prolong::parser::{parse_diffpoly, parse_nc, parse_val, SymTab};
use prolong::symcore::VarDeps;

fn main() {
    let mut tab = SymTab::new().with_field("u");
    for a in ["a1", "a2", "a3", "a4", "a5", "a6", "a7", "a8"] {
        tab.func(a, VarDeps::XT);
    }
    tab.gen("F", GenDeps::Jets(0));
    tab.gen("G", GenDeps::Jets(4));
    tab.gen("K0", GenDeps::Jets(3));
    tab.gen("K1", GenDeps::Jets(2));
    tab.gen("K2", GenDeps::Jets(1));
    tab.gen("K3", GenDeps::Jets(0));
    tab.gen("X0", GenDeps::XT);
    tab.gen("X1", GenDeps::XT);
    tab.gen("X2", GenDeps::XT);
    tab.gen("X3", GenDeps::XT);

    let rhs = parse_diffpoly(
        "-a1*u*u_xxx - a2*u_x*u_xx - a3*u^2*u_x - a4*u*u_x - a5*u_xxx \
         - a6*u_xxxxx - a7*u - a8*u_x",
        &tab,
    )
    .unwrap();
    let spec = AnsatzSpec {
        eq: EvolutionEquation::new("u", rhs),
        connection: "F".into(),
        remainders: vec![
            "G".into(),
            "K0".into(),
            "K1".into(),
            "K2".into(),
            "K3".into(),
            "X0".into(),
        ],
        branches: vec![
            (
                2,
                BranchAction::Expand {
                    gen: "F".into(),
                    repl: parse_val("X1 + X2*u + 1/2*X3*u^2", &tab).unwrap(),
                },
            ),
            (2, BranchAction::Zero { gen: "X3".into() }),
        ],
    };
    let state = run_cascade(&spec).unwrap();
    let table = BracketTable::kdv_standard();

    for stage in &state.stages {
        println!("== stage m={} solving {} ==", stage.order, stage.remainder);
        for (si, snap) in stage.snapshots.iter().enumerate() {
            println!("  snapshot {si}:");
            for (m, c) in snap {
                println!("    {m} | {}", nc_normalize(c, &table));
            }
        }
        println!("  piece: {}", stage.piece);
        println!();
    }

    println!("== final residual by jet monomial ==");
    for (m, c) in state.residual.collect_jets() {
        println!("  {m} | {}", nc_normalize(&c, &table));
        println!();
    }

    let rule = RewriteRule {
        gen: "X2".into(),
        rhs: parse_nc("[X1,X2] - ((a2_x - 3*a1_x)/(a2 - 3*a1))*X2", &tab).unwrap(),
    };
    let rewritten = apply_rewrites(&state.residual, &[rule]).unwrap();
    println!("== after rewrite ==");
    for (m, c) in rewritten.collect_jets() {
        println!("  {m} | {}", nc_normalize(&c, &table));
        println!();
    }
}
