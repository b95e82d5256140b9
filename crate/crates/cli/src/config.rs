//! Training configuration: catalog defaults, a TOML file, dot-path overrides
//! and flag overrides, merged in that order.

use std::path::Path;

use diffgame_core::qlearn::TrainConfig;
use diffgame_core::Algorithm;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::CliError;

/// Parses `key.path=value`. The value is read as a TOML literal when it
/// parses as one, otherwise as a bare string.
pub fn parse_override(s: &str) -> Result<(Vec<String>, Value), CliError> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {s:?} is not of the form key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::Usage(format!("override key {key:?} has an empty segment")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((path, value))
}

pub fn set_path(table: &mut Table, path: &[String], value: Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for seg in parents {
        let entry = cur.entry(seg.clone()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override path {:?} crosses a non-table key {seg:?}", path.join("."))))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

/// Flag-level overrides applied after the file and `--set` values.
#[derive(Debug, Default)]
pub struct FlagOverrides {
    pub algorithm: Option<String>,
    pub env: Option<String>,
    pub steps: Option<usize>,
    pub dt: Option<f64>,
}

pub fn resolve(file: Option<&Path>, sets: &[String], flags: &FlagOverrides) -> Result<TrainConfig, CliError> {
    let mut user = match file {
        Some(p) => read_table(p)?,
        None => Table::new(),
    };
    for s in sets {
        let (path, value) = parse_override(s)?;
        set_path(&mut user, &path, value)?;
    }
    if let Some(a) = &flags.algorithm {
        user.insert("algorithm".into(), Value::String(a.clone()));
    }
    if let Some(e) = &flags.env {
        user.insert("env".into(), Value::String(e.clone()));
    }
    if let Some(s) = flags.steps {
        user.insert("total_steps".into(), Value::Integer(s as i64));
    }
    if let Some(dt) = flags.dt {
        user.insert("dt".into(), Value::Float(dt));
    }
    let required = |key: &str| -> Result<String, CliError> {
        match user.get(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(other) => Err(CliError::Usage(format!("key `{key}` must be a string, got {other}"))),
            None => Err(CliError::Usage(format!("missing required key `{key}`"))),
        }
    };
    let algorithm: Algorithm = required("algorithm")?
        .parse()
        .map_err(|e| CliError::Usage(format!("key `algorithm`: {e}")))?;
    let env = required("env")?;
    let defaults = TrainConfig::for_env(algorithm, &env, 0).map_err(|e| CliError::Usage(format!("key `env`: {e}")))?;
    let mut table = match Value::try_from(&defaults) {
        Ok(Value::Table(t)) => t,
        _ => unreachable!("train config serializes to a table"),
    };
    // keep the parsed algorithm name canonical
    user.insert("algorithm".into(), Value::String(algorithm.name().into()));
    merge(&mut table, user);
    let config: TrainConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {}", e.message())))?;
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    config.discretize().map_err(|e| CliError::Usage(format!("config: {e}")))?;
    Ok(config)
}

pub fn to_toml(config: &TrainConfig) -> String {
    toml::to_string(config).expect("train config serializes")
}

/// Hex digest of the resolved configuration with the seed cleared, so runs
/// of one configuration share a parent directory.
pub fn config_hash(config: &TrainConfig) -> String {
    let mut c = config.clone();
    c.seed = 0;
    hash_text(&to_toml(&c))
}

pub fn hash_text(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..6])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(alg: &str, env: &str) -> FlagOverrides {
        FlagOverrides {
            algorithm: Some(alg.into()),
            env: Some(env.into()),
            ..FlagOverrides::default()
        }
    }

    #[test]
    fn overrides_parse_as_toml_or_string() {
        let (p, v) = parse_override("hidden=[8, 4]").unwrap();
        assert_eq!(p, vec!["hidden"]);
        assert_eq!(v, Value::Array(vec![Value::Integer(8), Value::Integer(4)]));
        let (_, v) = parse_override("u_mesh=LM(-1,1,4)").unwrap();
        assert_eq!(v, Value::String("LM(-1,1,4)".into()));
        let (p, _) = parse_override("a.b.c=1").unwrap();
        assert_eq!(p.len(), 3);
        assert!(parse_override("novalue").is_err());
        assert!(parse_override("a..b=1").is_err());
    }

    #[test]
    fn defaults_come_from_the_catalog() {
        let c = resolve(None, &[], &flags("idqn", "get_into_circle")).unwrap();
        assert_eq!(c, TrainConfig::for_env(Algorithm::Idqn, "get_into_circle", 0).unwrap());
    }

    #[test]
    fn later_sources_win() {
        let sets = vec!["total_steps=10".to_string(), "lr=0.01".into(), "u_mesh=LM(-0.5,0.5,4)".into()];
        let f = FlagOverrides {
            steps: Some(20),
            dt: Some(0.25),
            ..flags("DIDQN", "get_into_circle")
        };
        let c = resolve(None, &sets, &f).unwrap();
        assert_eq!((c.total_steps, c.lr, c.dt), (20, 0.01, 0.25));
        assert_eq!(c.algorithm, Algorithm::Didqn);
        assert_eq!(c.u_mesh.to_string(), "LM(-0.5,0.5,4)");
    }

    #[test]
    fn errors_name_the_key() {
        let e = resolve(None, &["bogus=1".into()], &flags("idqn", "get_into_circle")).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = resolve(None, &[], &flags("idqn", "nowhere")).unwrap_err();
        assert!(e.to_string().contains("env"), "{e}");
        let e = resolve(None, &[], &flags("sarsa", "get_into_circle")).unwrap_err();
        assert!(e.to_string().contains("algorithm"), "{e}");
        let e = resolve(None, &["u_mesh=XX(1)".into()], &flags("idqn", "get_into_circle")).unwrap_err();
        assert!(e.to_string().contains("u_mesh") || e.to_string().contains("XX"), "{e}");
    }

    #[test]
    fn toml_round_trip_and_seed_free_hash() {
        let mut c = resolve(None, &[], &flags("nashdqn", "escape_from_zero")).unwrap();
        let back: TrainConfig = toml::from_str(&to_toml(&c)).unwrap();
        assert_eq!(back, c);
        let h = config_hash(&c);
        c.seed = 9;
        assert_eq!(config_hash(&c), h);
        c.lr = 0.5;
        assert_ne!(config_hash(&c), h);
    }
}
