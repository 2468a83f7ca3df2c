//! Flat `key = value` config files. Entries become `--key=value` flags
//! placed ahead of the command-line flags, so explicit flags win.

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}, line {line}: expected `key = value`")]
    Syntax { path: String, line: usize },
    #[error("`--config` needs a path")]
    MissingPath,
}

/// Parses config text into `(key, value)` pairs. Blank lines and lines
/// starting with `#` are skipped; keys may be written with or without `--`.
pub fn parse(text: &str, path: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            path: path.into(),
            line: i + 1,
        })?;
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                path: path.into(),
                line: i + 1,
            });
        }
        out.push((key.to_owned(), value.trim().to_owned()));
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Vec<(String, String)>, ConfigError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: shown.clone(),
        source,
    })?;
    parse(&text, &shown)
}

/// Removes `--config PATH` / `--config=PATH` from `args` and splices the
/// file's entries in right after the subcommand name (`args[1]`).
pub fn expand(mut args: Vec<String>) -> Result<Vec<String>, ConfigError> {
    let Some(pos) = args
        .iter()
        .position(|a| a == "--config" || a.starts_with("--config="))
    else {
        return Ok(args);
    };
    let flag = args.remove(pos);
    let path = match flag.strip_prefix("--config=") {
        Some(p) => p.to_owned(),
        None if pos < args.len() => args.remove(pos),
        None => return Err(ConfigError::MissingPath),
    };
    let entries = load(Path::new(&path))?;
    let at = 2.min(args.len());
    let injected = entries.into_iter().map(|(k, v)| format!("--{k}={v}"));
    args.splice(at..at, injected);
    Ok(args)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_and_comments() {
        let cfg = parse("# run\nbeta = 0.1\n\n--lambda=-0.5\n", "x").unwrap();
        assert_eq!(
            cfg,
            vec![
                ("beta".into(), "0.1".into()),
                ("lambda".into(), "-0.5".into())
            ]
        );
        assert!(matches!(
            parse("beta 0.1", "x"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(parse("= 3", "x").is_err());
    }

    #[test]
    fn splices_after_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "eta = 0.2\nseed = 3\n").unwrap();
        let args: Vec<String> = [
            "sdnet",
            "train",
            "--config",
            path.to_str().unwrap(),
            "--eta",
            "0.4",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let out = expand(args).unwrap();
        assert_eq!(
            out,
            ["sdnet", "train", "--eta=0.2", "--seed=3", "--eta", "0.4"]
        );
    }
}
