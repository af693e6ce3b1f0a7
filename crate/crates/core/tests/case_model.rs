mod common;

use std::fs;

use proptest::prelude::*;

use mtdc_opf::case::{
    apply_scenario, parse_case_str, serialize_case, CaseError, CaseWarning, LossTriple, Scenario,
};

#[test]
fn bundled_cases_round_trip_canonically() {
    let files = common::bundled_case_files();
    assert!(files.len() >= 3);
    for path in files {
        let text = fs::read_to_string(&path).unwrap();
        let first = parse_case_str(&text).unwrap();
        let canonical = serialize_case(&first);
        let second = parse_case_str(&canonical).unwrap();
        assert_eq!(first, second, "{}", path.display());
        assert_eq!(canonical, serialize_case(&second), "{}", path.display());
    }
}

#[test]
fn loss_coefficient_sets_survive_round_trip_exactly() {
    let rec = LossTriple {
        a: 0.011,
        b: 0.003,
        c: 0.004,
    };
    let inv = LossTriple {
        a: 0.011,
        b: 0.003,
        c: 0.007,
    };
    let case = common::case("nordic_like.case");
    let again = parse_case_str(&serialize_case(&case)).unwrap();
    for conv in case.converters.iter().chain(&again.converters) {
        assert_eq!(conv.losses.rectifier, rec);
        assert_eq!(conv.losses.inverter, inv);
    }
}

#[test]
fn nordic_like_bases_and_per_unit_conversion() {
    let case = common::case("nordic_like.case");
    assert_eq!(case.s_nominal, 100.0);
    assert_eq!(case.v_dc_nominal, 200.0);
    let text = fs::read_to_string(common::cases_dir().join("nordic_like.case")).unwrap();
    // first converter row: Pdcmax in MW → pu
    let row = text
        .lines()
        .skip_while(|l| l.trim() != "convdc")
        .find(|l| !l.starts_with('#') && l.trim() != "convdc")
        .unwrap();
    let p_dc_max: f64 = row.split_whitespace().nth(4).unwrap().parse().unwrap();
    assert_eq!(case.converters[0].p_dc_max, p_dc_max / 100.0);
}

#[test]
fn empty_scenario_is_identity() {
    let case = common::case("nordic_like.case");
    assert_eq!(apply_scenario(&case, &Scenario::normal("n")).unwrap(), case);
}

#[test]
fn generator_outage_removes_exactly_one_generator() {
    let case = common::case("nordic_like.case");
    let post = apply_scenario(&case, &common::scenario("gen_outage_16.scenario")).unwrap();
    assert_eq!(post.generators.len(), case.generators.len() - 1);
    assert!(post.generators.iter().all(|g| g.id != 16));
    assert_eq!(post.ac_buses, case.ac_buses);
    assert_eq!(post.converters, case.converters);
    assert_eq!(post.dc_branches, case.dc_branches);
}

#[test]
fn unknown_outage_id_is_named() {
    let case = common::case("nordic_like.case");
    let mut s = Scenario::normal("bad");
    s.generator_outages.insert(99);
    let err = apply_scenario(&case, &s).unwrap_err();
    assert!(
        matches!(err, CaseError::UnknownElement(ref e) if e.contains("99")),
        "{err}"
    );
}

#[test]
fn converter_outage_on_leaf_dc_bus_is_a_warning() {
    // radial DC grid 1-2-3; dropping the converter at DC bus 3 leaves a leaf
    let text = fs::read_to_string(common::cases_dir().join("three_terminal.case"))
        .unwrap()
        .replace("1 3 0.073\n", "");
    let case = parse_case_str(&text).unwrap();
    let mut s = Scenario::normal("leaf");
    s.converter_outages.insert(3);
    let post = apply_scenario(&case, &s).unwrap();
    assert_eq!(post.dc_buses.len(), 3);
    assert_eq!(
        post.validate().unwrap(),
        vec![CaseWarning::InjectionFreeLeaf { dc_bus: 3 }]
    );
}

/// Case text whose numbers all have few decimals, so the canonical form
/// reproduces them exactly.
fn arb_case_text() -> impl Strategy<Value = String> {
    let bus = (0u32..400, 0u32..100, 0u32..20);
    let branch = (1u32..50, 20u32..400, 0u32..50);
    let gen = (10u32..300, 0u32..50, 1u32..60, 0u32..500);
    (
        prop::collection::vec(bus, 2..6),
        prop::collection::vec(branch, 5),
        prop::collection::vec(gen, 1..3),
        prop::option::of((1u32..40, 50u32..300, 1u32..500)),
    )
        .prop_map(|(buses, branches, gens, dc)| {
            let n = buses.len();
            let mut t = String::from("mtdc-case 1\nname random\nbaseMVA 100\nbaseKVdc 320\nbus\n");
            for (i, (pd, qd, bs)) in buses.iter().enumerate() {
                let ty = if i == 0 { 3 } else { 1 };
                t += &format!(
                    "{} {ty} {} {} 0 {} 1 0 1.1 0.9\n",
                    i + 1,
                    *pd as f64 / 2.0,
                    *qd as f64 / 4.0,
                    *bs as f64 / 10.0
                );
            }
            t += "end\ngen\n";
            for (g, (pmax, c2, c1, c0)) in gens.iter().enumerate() {
                t += &format!(
                    "{} {} {pmax} 0 100 -100 {} {} {c0}\n",
                    g + 1,
                    g % n + 1,
                    *c2 as f64 / 1000.0,
                    *c1 as f64 / 4.0
                );
            }
            t += "end\nbranch\n";
            for i in 1..n {
                let (r, x, b) = branches[i - 1];
                t += &format!(
                    "{i} {} {} {} {}\n",
                    i + 1,
                    r as f64 / 1000.0,
                    x as f64 / 1000.0,
                    b as f64 / 100.0
                );
            }
            t += "end\n";
            if let Some((r, pmax, k)) = dc {
                t += &format!(
                    "busdc\n1 1 1.1 0.9\n2 1 1.05 0.95\nend\nbranchdc\n1 2 {}\nend\nconvdc\n",
                    r as f64 / 1000.0
                );
                for c in 1..=2 {
                    t += &format!(
                        "{c} {} {c} -{pmax} {pmax} 1.2 0.011 0.003 0.004 0.011 0.003 0.007 3 0 1 {} 0.001 0.5\n",
                        (c - 1) % n + 1,
                        k as f64 / 1000.0
                    );
                }
                t += "end\n";
            }
            t
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parse_serialize_round_trip(text in arb_case_text()) {
        let case = parse_case_str(&text).unwrap();
        let canonical = serialize_case(&case);
        let again = parse_case_str(&canonical).unwrap();
        prop_assert_eq!(&again, &case);
        prop_assert_eq!(serialize_case(&again), canonical);
    }

    #[test]
    fn applying_a_scenario_twice_equals_once(
        gens in prop::collection::btree_set(2u32..=18, 0..4),
        convs in prop::collection::btree_set(1u32..=4, 0..2),
    ) {
        let case = common::case("nordic_like.case");
        let before = case.clone();
        let s = Scenario {
            name: "random".into(),
            generator_outages: gens,
            converter_outages: convs,
        };
        let once = apply_scenario(&case, &s);
        prop_assert_eq!(&case, &before);
        match once {
            Ok(once) => prop_assert_eq!(apply_scenario(&once, &s).unwrap(), once),
            Err(_) => {}
        }
    }
}
