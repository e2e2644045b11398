use std::fs;

use esp_core::store::Role;
use esp_server::{Config, ConfigError, User, Users};

#[test]
fn relative_paths_resolve_against_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("esp.toml"),
        r#"
listen = "127.0.0.1:9999"
store = "data/store"
users_file = "users.toml"

[engine]
workers = 3

[watchdog]
wall_clock_timeout_secs = 5.0
step_budget = 1000
"#,
    )
    .unwrap();
    fs::write(
        dir.path().join("users.toml"),
        r#"
[[users]]
user_id = "sam"
role = "SUPERUSER"
api_token = "s3"

[[users]]
user_id = "erin"
display_name = "Erin"
role = "ENDUSER"
api_token = "e1"
"#,
    )
    .unwrap();
    let c = Config::from_file(&dir.path().join("esp.toml")).unwrap();
    assert_eq!(c.listen, "127.0.0.1:9999");
    assert_eq!(c.store, dir.path().join("data/store"));
    let e = c.engine_config().unwrap();
    assert_eq!(e.workers, 3);
    assert_eq!(e.policy.step_budget, 1000);
    assert_eq!(e.policy.check_interval_ms, 250);
    let users = c.users().unwrap();
    assert_eq!(users.len(), 2);
    assert_eq!(users.authenticate("e1").unwrap().role, Role::Enduser);
    assert!(users.authenticate("E1").is_none());
}

#[test]
fn rejects_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("esp.toml");
    fs::write(&p, "listen = 1").unwrap();
    assert!(matches!(Config::from_file(&p), Err(ConfigError::Parse { .. })));
    fs::write(&p, "mystery = true").unwrap();
    assert!(matches!(Config::from_file(&p), Err(ConfigError::Parse { .. })));
    assert!(matches!(
        Config::from_file(&dir.path().join("missing.toml")),
        Err(ConfigError::Read { .. })
    ));
    fs::write(&p, "[engine]\nworkers = 0").unwrap();
    assert!(Config::from_file(&p).unwrap().engine_config().is_err());
}

#[test]
fn tokens_and_ids_are_unique() {
    let u = |id: &str, tok: &str| User {
        user_id: id.into(),
        display_name: String::new(),
        role: Role::Enduser,
        api_token: tok.into(),
    };
    assert!(Users::new(vec![u("a", "t"), u("b", "t")]).is_err());
    assert!(Users::new(vec![u("a", "t"), u("a", "s")]).is_err());
    assert!(Users::new(vec![u("a", "")]).is_err());
    assert!(Users::new(vec![u("a", "t"), u("b", "s")]).is_ok());
}
