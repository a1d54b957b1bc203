//! Prints every artifact of the third-order MKdV prolongation cascade, for
//! eyeballing while writing the case file.

use prolong::ew::{
    apply_rewrites, instantiate_constraints, run_cascade, AnsatzSpec, BranchAction, Forms,
    RewriteRule,
};
use prolong::jetalg::{EvolutionEquation, JetMono};
use prolong::liealg::{nc_normalize, BracketTable, GenDeps, NCExpr};
use prolong::parser::{parse_diffpoly, parse_expr, parse_nc, parse_val, SymTab};
use prolong::symcore::VarDeps;

fn main() {
    let mut tab = SymTab::new().with_field("v");
    tab.func("b1", VarDeps::XT);
    tab.func("b2", VarDeps::XT);
    for f in ["f1", "f2", "f3", "f4", "g1", "g2", "g3", "g4"] {
        tab.func(f, VarDeps::XT);
    }
    tab.gen("F", GenDeps::Jets(0));
    tab.gen("G", GenDeps::Jets(2));
    tab.gen("K0", GenDeps::Jets(1));
    tab.gen("K1", GenDeps::Jets(0));
    tab.gen("X0", GenDeps::XT);
    tab.gen("X1", GenDeps::XT);
    tab.gen("X2", GenDeps::XT);

    let rhs = parse_diffpoly("-b1*v_xxx - b2*v^2*v_x", &tab).unwrap();
    let spec = AnsatzSpec {
        eq: EvolutionEquation::new("v", rhs),
        connection: "F".into(),
        remainders: vec!["G".into(), "K0".into(), "K1".into(), "X0".into()],
        branches: vec![(
            1,
            BranchAction::Expand {
                gen: "F".into(),
                repl: parse_val("X1 + X2*v", &tab).unwrap(),
            },
        )],
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
    }

    println!("\n== final residual by jet monomial ==");
    for (m, c) in state.residual.collect_jets() {
        println!("  {m} | {}", nc_normalize(&c, &table));
    }

    let rule = RewriteRule {
        gen: "X2".into(),
        rhs: parse_nc("[X1,X2] - (b1_x/b1)*X2", &tab).unwrap(),
    };
    let rewritten = apply_rewrites(&state.residual, &[rule.clone()]).unwrap();
    println!("\n== after rewrite X2_x = [X1,X2] - (b1_x/b1)*X2 ==");
    for (m, c) in rewritten.collect_jets() {
        println!("  {m} | {}", nc_normalize(&c, &table));
    }

    // Instantiate through the printed 2x2 forms.
    let mut forms = Forms::default();
    let mat = |a: &str, b: &str, c: &str, d: &str| {
        [
            [parse_expr(a, &tab).unwrap(), parse_expr(b, &tab).unwrap()],
            [parse_expr(c, &tab).unwrap(), parse_expr(d, &tab).unwrap()],
        ]
    };
    forms.mats.insert("X1".into(), mat("0", "f1", "f2", "0"));
    forms.mats.insert("X2".into(), mat("0", "f3", "f4", "0"));
    forms.mats.insert("X0".into(), mat("g1", "g2", "g3", "g4"));
    let mut constraints: Vec<(JetMono, NCExpr)> =
        vec![(JetMono::unit(), rule.residual())];
    constraints.extend(rewritten.collect_jets());
    let sys = instantiate_constraints(&constraints, &forms).unwrap();
    println!("\n== instantiated scalar system ({} equations) ==", sys.len());
    for d in &sys.eqs {
        println!("  {} ({},{}) | {}", d.jet, d.entry.0, d.entry.1, d.lhs);
    }

    println!("\n== parse_nc Dx check ==");
    match parse_nc("Dx(b1*X2)", &tab) {
        Ok(e) => println!("  Dx(b1*X2) = {e}"),
        Err(e) => println!("  error: {e}"),
    }
    match parse_nc("X2_t - Dx(Dx(b1*X2)) + [X1, Dx(b1*X2)]", &tab) {
        Ok(e) => println!("  composite = {e}"),
        Err(e) => println!("  error: {e}"),
    }
}
