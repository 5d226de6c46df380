mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use common::{arb_sequence, flag, nrf_oracle, MACHINES, PLACES};
use sitebt::actionseq::{analyze_flags, eval_expr, parse, serialize, validate, Dialect, FlagExpr, IssueCode};
use sitebt::flagcore::{default_registry, FlagName};

/// Boolean formula over flag slots 0..4, evaluated without the library.
#[derive(Debug, Clone)]
enum Formula {
    Var(usize, bool),
    All(Vec<Formula>),
    Any(Vec<Formula>),
}

impl Formula {
    fn truth(&self, row: u32) -> bool {
        match self {
            Formula::Var(i, want) => ((row >> i) & 1 == 1) == *want,
            Formula::All(v) => v.iter().all(|f| f.truth(row)),
            Formula::Any(v) => v.iter().any(|f| f.truth(row)),
        }
    }

    fn vars(&self) -> usize {
        match self {
            Formula::Var(..) => 1,
            Formula::All(v) | Formula::Any(v) => v.iter().map(Formula::vars).sum(),
        }
    }

    fn to_expr(&self, names: &[FlagName]) -> FlagExpr {
        match self {
            Formula::Var(i, want) => FlagExpr::leaf(names[*i].clone(), *want),
            Formula::All(v) => FlagExpr::And(v.iter().map(|f| f.to_expr(names)).collect()),
            Formula::Any(v) => FlagExpr::Or(v.iter().map(|f| f.to_expr(names)).collect()),
        }
    }
}

fn arb_formula() -> impl Strategy<Value = Formula> {
    let leaf = (0..4usize, any::<bool>()).prop_map(|(i, b)| Formula::Var(i, b));
    leaf.prop_recursive(3, 4, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..=3).prop_map(Formula::All),
            prop::collection::vec(inner, 0..=3).prop_map(Formula::Any),
        ]
    })
    .prop_filter("at most four leaves", |f| f.vars() <= 4)
}

fn site() -> (BTreeMap<String, sitebt::MachineKind>, BTreeSet<String>) {
    (
        MACHINES.iter().map(|(m, k)| (m.to_string(), *k)).collect(),
        PLACES.iter().map(|p| p.to_string()).collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn eval_matches_truth_table(f in arb_formula()) {
        let names: Vec<FlagName> = (0..4).map(|i| flag(&format!("F{i}_FLG"))).collect();
        let expr = f.to_expr(&names);
        for row in 0..16u32 {
            let snap: BTreeMap<FlagName, bool> =
                names.iter().enumerate().map(|(i, n)| (n.clone(), (row >> i) & 1 == 1)).collect();
            prop_assert_eq!(eval_expr(&expr, &snap).unwrap(), f.truth(row), "row {:04b}", row);
        }
    }

    #[test]
    fn serialize_then_parse_is_identity((seq, _) in arb_sequence()) {
        let text = serialize(&seq);
        let back = parse(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&back, &seq);
        prop_assert_eq!(serialize(&back), text);
    }

    #[test]
    fn generated_sequences_validate((seq, _) in arb_sequence()) {
        let (kinds, places) = site();
        let report = validate(&seq, &kinds, &places, &default_registry(PLACES));
        prop_assert!(report.is_ok(), "{:?}\n{}", report.errors, serialize(&seq));
    }

    #[test]
    fn expressions_round_trip_in_both_dialects((seq, _) in arb_sequence()) {
        for s in seq.statements.iter().filter(|s| !s.precondition.is_always()) {
            for d in [Dialect::Plan, Dialect::Script] {
                let text = s.precondition.render(d);
                prop_assert_eq!(&FlagExpr::parse(&text, d).unwrap(), &s.precondition, "{}", text);
            }
        }
    }

    #[test]
    fn parser_is_total(text in "(([0-9]{1,2}\\. )?[a-z_(), =#A-Z]{0,40}\n){0,6}") {
        check_total(&text)?;
    }

    #[test]
    fn parser_is_total_on_mutations(
        (seq, _) in arb_sequence(),
        cut in any::<prop::sample::Index>(),
        noise in "[ -~\n]{0,4}",
    ) {
        let mut text = serialize(&seq);
        let at = cut.index(text.len() + 1);
        text.insert_str(at, &noise);
        check_total(&text)?;
    }

    #[test]
    fn nrf_agrees_with_oracle((seq, origin) in arb_sequence()) {
        let got = analyze_flags(&seq).unwrap().nrf;
        prop_assert_eq!(got, nrf_oracle(&seq, &origin), "{}", serialize(&seq));
    }
}

fn check_total(text: &str) -> Result<(), TestCaseError> {
    match parse(text) {
        Ok(seq) => {
            // whatever parsed must survive its own canonical form
            let again = parse(&serialize(&seq)).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(again, seq);
        }
        Err(e) => {
            let lines = text.lines().count().max(1);
            prop_assert!((1..=lines).contains(&e.line()), "line {} of {}: {}", e.line(), lines, e);
        }
    }
    Ok(())
}

#[test]
fn off_table_pairs_are_rejected() {
    use sitebt::actionseq::{ActionSequence, ActionStatement, SKILLS};
    let (kinds, places) = site();
    for sig in &SKILLS {
        for (machine, kind) in MACHINES {
            let params: Vec<&str> = sig.params[1..].iter().map(|_| "mound").collect();
            let mut seq = ActionSequence::default();
            seq.push(ActionStatement::new(0, sig.skill, machine, &params));
            let report = validate(&seq, &kinds, &places, &default_registry(PLACES));
            let allowed = sig.machine_kinds.contains(&kind);
            assert_eq!(
                !report.has(IssueCode::SkillKindMismatch),
                allowed,
                "{} on {machine}",
                sig.name
            );
        }
    }
}

#[test]
fn generator_exercises_both_redundancy_rules() {
    use proptest::strategy::ValueTree;
    use proptest::test_runner::TestRunner;
    use sitebt::actionseq::RedundancyReason;
    let mut runner = TestRunner::deterministic();
    let mut seen = BTreeSet::new();
    let mut clean = 0;
    for _ in 0..500 {
        let (seq, _) = arb_sequence().new_tree(&mut runner).unwrap().current();
        let a = analyze_flags(&seq).unwrap();
        clean += usize::from(a.nrf == 0 && !seq.generated_flags.is_empty());
        seen.extend(a.redundant.iter().map(|r| format!("{:?}", r.reason)));
    }
    assert!(clean > 0);
    assert!(seen.contains(&format!("{:?}", RedundancyReason::DuplicateSemantics)));
    assert!(seen.contains(&format!("{:?}", RedundancyReason::IntraMachineSuperfluous)));
}
