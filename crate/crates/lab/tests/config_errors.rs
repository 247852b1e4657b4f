use scl_lab::config::{Config, ConfigError, FieldExpr};
use scl_lab::scenario::{ControlSource, Scenario, IDENTITY_CFG, RETARGET_SMALL_CFG};

const MINIMAL: &str = "name = probe\n[spec]\nT = 1\neps = 1e-2\ng0 = \"const:1.0 + cos:1:0.1\"\n";

#[test]
fn missing_horizon_names_the_key() {
    let err = Scenario::parse("name = probe\n[spec]\neps = 1e-2\ng0 = \"const:1\"\n").unwrap_err();
    assert_eq!(err, ConfigError::Missing { key: "spec.T".into() });
    assert!(err.to_string().contains("spec.T"));
}

#[test]
fn unknown_keys_are_rejected() {
    let err = Scenario::parse(&format!("{MINIMAL}[solver]\nsteps = 3\n")).unwrap_err();
    assert_eq!(err, ConfigError::Unknown { key: "solver.steps".into() });
}

#[test]
fn bad_values_carry_key_and_text() {
    match Scenario::parse(&MINIMAL.replace("T = 1", "T = soon")).unwrap_err() {
        ConfigError::BadValue { key, value, .. } => assert_eq!((key.as_str(), value.as_str()), ("spec.T", "soon")),
        e => panic!("unexpected {e:?}"),
    }
    assert!(matches!(Scenario::parse(&MINIMAL.replace("T = 1", "T = -1")), Err(ConfigError::BadValue { .. })));
    assert!(matches!(
        Scenario::parse(&format!("{MINIMAL}[grid]\nn = 100\n")),
        Err(ConfigError::BadValue { key, .. }) if key == "grid.n"
    ));
    assert!(matches!(
        Scenario::parse(&format!("{MINIMAL}[control]\nsource = constant\neta0 = \"const:1\"\n")),
        Err(ConfigError::BadValue { key, .. }) if key == "control.eta0"
    ));
    assert!(matches!(Config::parse("just text\n"), Err(ConfigError::Syntax { line: 1, .. })));
    assert!(matches!(Config::parse("a = 1\na = 2\n"), Err(ConfigError::Syntax { line: 2, .. })));
}

#[test]
fn field_expression_matches_the_written_sum() {
    let s = Scenario::parse(MINIMAL).unwrap();
    for (j, x) in s.grid.nodes().iter().enumerate() {
        assert!((s.spec.g0.values()[j] - (1.0 + 0.1 * x.cos())).abs() < 1e-15);
    }
    // unspecified target components default to the initial ones
    assert_eq!(s.spec.ghat0, s.spec.g0);
    assert_eq!(s.spec.vhat1.max_abs(), 0.0);
    let e = FieldExpr::parse("k", "sin:3:2 + const:-0.5").unwrap();
    assert_eq!((e.constant, e.modes.coeff(3)), (-0.5, [2.0, 0.0]));
}

#[test]
fn section_headers_and_dotted_keys_are_equivalent() {
    let dotted = Config::parse("name = a\nspec.T = 2\nspec.eps = 0.1\nspec.g0 = const:1\n").unwrap();
    let sectioned = Config::parse("name = a\n[spec]\nT = 2\neps = 0.1\ng0 = \"const:1\"\n").unwrap();
    assert_eq!(dotted.canonical(), sectioned.canonical());
}

#[test]
fn bundled_scenarios_describe_the_documented_problems() {
    let id = Scenario::parse(IDENTITY_CFG).unwrap();
    assert_eq!(id.spec.eps, 1e-8);
    assert_eq!(id.control, ControlSource::Synthesized);
    assert_eq!(id.grid.n_points(), 256);
    let rt = Scenario::parse(RETARGET_SMALL_CFG).unwrap();
    assert_eq!((rt.spec.eps, rt.big_n), (1e-2, 2));
    let x = rt.grid.nodes();
    assert!((rt.spec.ghat1.values()[5] - 0.05 * x[5].sin()).abs() < 1e-15);
    assert!((rt.spec.vhat1.values()[5] - 0.05 * x[5].cos()).abs() < 1e-15);
    assert_eq!(rt.sweeps.osc, vec![4, 8, 16, 32]);
    rt.spec.validate().unwrap();
}
