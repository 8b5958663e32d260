//! Run-config files: TOML with `[env]`, `[algo]` and `[training]` tables,
//! plus `key=value` overrides checked against the same schema.

use std::path::Path;

use scpo_core::trainer::RunConfig;
use serde::Deserialize;
use toml::{Table, Value};

const SECTIONS: [&str; 3] = ["env", "algo", "training"];

/// Optional `[env]` keys (absent from a serialized default).
const ENV_OPTIONAL: [&str; 9] = [
    "hazards",
    "pillars",
    "max_episode_steps",
    "goal_radius",
    "hazard_radius",
    "pillar_radius",
    "world_half_extent",
    "dt",
    "max_speed",
];

/// Every accepted key, by section.
pub fn schema() -> Vec<(&'static str, Vec<String>)> {
    let default = Value::try_from(RunConfig::default()).expect("default config serializes");
    SECTIONS
        .iter()
        .map(|&section| {
            let mut keys: Vec<String> = default
                .get(section)
                .and_then(Value::as_table)
                .map(|t| t.keys().cloned().collect())
                .unwrap_or_default();
            if section == "env" {
                keys.extend(ENV_OPTIONAL.iter().map(|k| k.to_string()));
            }
            keys.sort();
            (section, keys)
        })
        .collect()
}

fn resolve_key(key: &str) -> Result<(String, String), String> {
    let schema = schema();
    if let Some((section, field)) = key.split_once('.') {
        return match schema.iter().find(|(s, _)| *s == section) {
            Some((_, keys)) if keys.iter().any(|k| k == field) => Ok((section.into(), field.into())),
            Some(_) => Err(format!("unknown key `{field}` in section [{section}]")),
            None => Err(format!("unknown section `{section}` (expected env, algo or training)")),
        };
    }
    let owners: Vec<&str> = schema
        .iter()
        .filter(|(_, keys)| keys.iter().any(|k| k == key))
        .map(|(s, _)| *s)
        .collect();
    match owners.as_slice() {
        [one] => Ok((one.to_string(), key.to_string())),
        [] => Err(format!("unknown config key `{key}`")),
        many => Err(format!("ambiguous key `{key}`: qualify it as one of {}", many.join(", "))),
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies `key=value` overrides to a parsed config table.
pub fn apply_overrides(table: &mut Table, overrides: &[String]) -> Result<(), String> {
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| format!("override `{item}` is not of the form key=value"))?;
        let (section, field) = resolve_key(key.trim())?;
        let entry = table
            .entry(section.clone())
            .or_insert_with(|| Value::Table(Table::new()));
        let sect = entry
            .as_table_mut()
            .ok_or_else(|| format!("[{section}] is not a table"))?;
        sect.insert(field, parse_value(raw.trim()));
    }
    Ok(())
}

/// Type-checks a table against the schema and validates the result.
pub fn config_from_table(table: Table) -> Result<RunConfig, String> {
    let config = RunConfig::deserialize(Value::Table(table)).map_err(|e| format!("invalid config: {e}"))?;
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig, String> {
    let mut table: Table = toml::from_str(text).map_err(|e| format!("cannot parse config: {e}"))?;
    apply_overrides(&mut table, overrides)?;
    config_from_table(table)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
    parse_config(&text, overrides).map_err(|e| format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use scpo_core::trainer::Algo;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_config("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_and_overrides() {
        let text = "[algo]\nname = \"trpo\"\ndelta = 0.01\n[training]\nepochs = 7\n";
        let cfg = parse_config(text, &["epochs=3".into(), "algo.cost_limit=0.05".into()]).unwrap();
        assert_eq!(cfg.algo.name, Algo::Trpo);
        assert_eq!(cfg.algo.delta, 0.01);
        assert_eq!(cfg.training.epochs, 3);
        assert_eq!(cfg.algo.cost_limit, 0.05);
        let cfg = parse_config("", &["preset=point-pillar-8".into(), "hazard_radius=0.3".into()]).unwrap();
        assert_eq!(cfg.env.preset, "point-pillar-8");
        assert_eq!(cfg.env.hazard_radius, Some(0.3));
        let cfg = parse_config("", &["name=cpo".into(), "hidden=[32, 32]".into()]).unwrap();
        assert_eq!(cfg.algo.name, Algo::Cpo);
        assert_eq!(cfg.training.hidden, vec![32, 32]);
    }

    #[test]
    fn unknown_and_mistyped_keys_rejected() {
        assert!(parse_config("[algo]\nlearning_rate = 1.0\n", &[]).unwrap_err().contains("learning_rate"));
        assert!(parse_config("[extra]\nx = 1\n", &[]).is_err());
        assert!(parse_config("", &["bogus=1".into()]).unwrap_err().contains("bogus"));
        assert!(parse_config("", &["epochs=many".into()]).unwrap_err().contains("invalid"));
        assert!(parse_config("", &["epochs".into()]).is_err());
        assert!(parse_config("", &["num_constraints=2".into()]).is_err());
    }

    #[test]
    fn schema_covers_every_section() {
        let s = schema();
        assert_eq!(s.len(), 3);
        for (section, keys) in &s {
            assert!(!keys.is_empty(), "{section}");
        }
        assert!(s[0].1.iter().any(|k| k == "hazard_radius"));
    }
}
