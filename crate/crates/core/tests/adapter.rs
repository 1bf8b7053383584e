mod common;

use wordattr::attribution::{attribute, make_baseline, AttributionError};
use wordattr::model::Head;
use wordattr::oracle::VocabPolicy;
use wordattr::{AttributionConfig, BaselineStrategy, BuiltinOracle, GradientOracle, Method, OracleError, Target};

#[test]
fn conforming_fixture_handshake() {
    let o = common::spawn_fixture(&["sum"], 5_000).unwrap();
    let d = o.descriptor();
    assert_eq!((d.version, d.dim, d.head), (1, 16, Head::Scalar));
    assert_eq!(d.vocab, VocabPolicy::Open);
    assert!(d.references.mask.is_none());
}

#[test]
fn sum_fixture_value_and_gradient() {
    let mut o = common::spawn_fixture(&["sum", "--dim", "3"], 5_000).unwrap();
    let x = o.embed("go team").unwrap().x;
    let out = o.eval(&x, Target::Scalar, true).unwrap();
    assert_eq!(out.value, x.as_slice().iter().sum::<f64>());
    assert!(out.gradient.unwrap().as_slice().iter().all(|&g| g == 1.0));
    let v = o.eval(&x, Target::Scalar, false).unwrap();
    assert!(v.gradient.is_none());
}

#[test]
fn mask_baseline_unavailable_through_fixture() {
    let mut o = common::spawn_fixture(&["sum", "--dim", "2"], 5_000).unwrap();
    let e = o.embed("a b").unwrap();
    let refs = o.descriptor().references.clone();
    let r = make_baseline(&e.x, &e.tokens, BaselineStrategy::Mask, &refs);
    assert!(matches!(r, Err(AttributionError::MaskUnavailable)));
}

#[test]
fn deeplift_needs_builtin() {
    let mut o = common::spawn_fixture(&["quadratic", "--dim", "2"], 5_000).unwrap();
    let e = o.embed("a b").unwrap();
    let cfg = AttributionConfig {
        method: Method::DeepLift,
        ..AttributionConfig::default()
    };
    assert!(matches!(
        attribute(&mut o, &e, Target::Scalar, &cfg),
        Err(AttributionError::UnsupportedOracle)
    ));
}

#[test]
fn class_head_served_identically() {
    let texts: Vec<String> = common::LINEAR_TEXTS.iter().map(|s| s.to_string()).collect();
    let arch = wordattr::ArchConfig {
        head: Head::Classes(3),
        ..wordattr::ArchConfig::default()
    };
    let vocab = wordattr::Vocab::build(&wordattr::Tokenizer::default(), texts.iter().map(String::as_str));
    let p = wordattr::ModelParams::init(arch, vocab, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut remote = common::spawn_params(&p, dir.path());
    let mut local = BuiltinOracle::new(p);
    assert_eq!(remote.descriptor().head, Head::Classes(3));
    let e = local.embed("we can do this").unwrap();
    for c in 0..3 {
        let cfg = AttributionConfig::default();
        let a = attribute(&mut local, &e, Target::Class(c), &cfg).unwrap();
        let b = attribute(&mut remote, &e, Target::Class(c), &cfg).unwrap();
        assert!(a.entries.max_abs_diff(&b.entries) <= 1e-12);
    }
    assert!(matches!(
        remote.eval(&e.x, Target::Class(7), false),
        Err(OracleError::Reported(_))
    ));
}

#[test]
fn session_is_poisoned_after_timeout() {
    let mut o = common::spawn_fixture(&["sum", "--dim", "2", "--fault", "hang-on-eval"], 200).unwrap();
    let x = o.embed("a").unwrap().x;
    assert!(matches!(
        o.value(&x, Target::Scalar),
        Err(OracleError::Timeout { exited: false, .. })
    ));
    assert!(matches!(o.embed("a"), Err(OracleError::Protocol(_))));
}
