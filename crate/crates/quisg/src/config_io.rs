//! Flat TOML configuration with command-line overrides.

use std::fs;
use std::path::Path;

use quisg_core::PipelineConfig;

use crate::{Error, Result};

/// Config file (if any), then `key=value` overrides, then the seed flag.
/// Override values are parsed as TOML scalars, falling back to a string.
pub fn resolve(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<PipelineConfig> {
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            text.parse::<toml::Table>().map_err(|e| Error::Toml {
                path: p.into(),
                message: e.to_string(),
            })?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Error::Override(o.clone()))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Override(o.clone()));
        }
        let value = format!("x = {v}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("x"))
            .unwrap_or_else(|| toml::Value::String(v.to_string()));
        table.insert(k.to_string(), value);
    }
    if let Some(s) = seed {
        let s = i64::try_from(s).map_err(|_| Error::Override(format!("seed={s}")))?;
        table.insert("seed".into(), toml::Value::Integer(s));
    }
    let origin = path.map(Path::to_path_buf).unwrap_or_else(|| "<overrides>".into());
    let cfg: PipelineConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Toml {
        path: origin,
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_without_input() {
        assert_eq!(resolve(None, &[], None).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn layering() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "k = 5\nf = 0.9\nseed = 1\n").unwrap();
        let cfg = resolve(Some(&p), &["k=2".into(), "unanswerable = true".into()], Some(7)).unwrap();
        assert_eq!((cfg.k, cfg.f, cfg.seed, cfg.unanswerable), (2, 0.9, 7, true));
    }

    #[test]
    fn unknown_key_rejected() {
        let err = resolve(None, &["beam_width=3".into()], None).unwrap_err();
        assert!(err.to_string().contains("beam_width"), "{err}");
        assert!(matches!(resolve(None, &["oops".into()], None), Err(Error::Override(_))));
    }
}
