use std::fs;

use rmixer_core::config::EnvSpec;
use rmixer_core::load_config;

// Lives in its own test binary so setting the variable cannot race other tests.
#[test]
fn bridge_url_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rmixer.json");
    fs::write(
        &path,
        r#"{"env": {"bridge": {"url": "http://example.invalid:1"}}, "pair": {"label_1": "a", "label_2": "b"}}"#,
    )
    .unwrap();

    let url = |cfg: rmixer_core::RunConfig| match cfg.env {
        EnvSpec::Bridge(b) => b.url,
        EnvSpec::Synthetic(_) => panic!("expected a bridge env"),
    };
    std::env::remove_var("RMIXER_BRIDGE_URL");
    assert_eq!(url(load_config(&path).unwrap()), "http://example.invalid:1");
    std::env::set_var("RMIXER_BRIDGE_URL", "http://127.0.0.1:9");
    assert_eq!(url(load_config(&path).unwrap()), "http://127.0.0.1:9");
    std::env::set_var("RMIXER_BRIDGE_URL", "");
    assert_eq!(url(load_config(&path).unwrap()), "http://example.invalid:1");
}

#[test]
fn unreadable_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_config(&dir.path().join("missing.json")).unwrap_err();
    assert!(matches!(err, rmixer_core::Error::Config { .. }), "{err}");
}
