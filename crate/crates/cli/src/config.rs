//! `--config FILE` support.
//!
//! A config file is flat `key = value` text whose keys are long flag names
//! (`iterations = 20000`, `parallel = true`). Blank lines and `#` comments are
//! skipped. The file's entries are spliced into the argument list ahead of the
//! user's own flags, and since every flag overrides earlier occurrences of
//! itself, flags given on the command line win.

use std::ffi::OsString;
use std::path::Path;

use h2s_core::{io, H2sError, Result};

/// Parses a config file into `(key, value)` pairs in file order.
pub fn parse_config(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(H2sError::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                message: format!("expected `key = value`, got {line:?}"),
            });
        };
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(H2sError::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                message: format!("invalid key {:?}", k.trim()),
            });
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn as_flags(pairs: &[(String, String)]) -> Vec<OsString> {
    let mut flags = Vec::new();
    for (k, v) in pairs {
        match v.as_str() {
            "true" => flags.push(format!("--{k}").into()),
            "false" => {}
            _ => {
                flags.push(format!("--{k}").into());
                flags.push(v.into());
            }
        }
    }
    flags
}

/// Expands `--config FILE` (or `--config=FILE`) in `args`. The expanded
/// entries are placed right after the subcommand name.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut config = None;
    let mut rest = Vec::with_capacity(args.len());
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy().into_owned();
        if s == "--config" {
            match it.next() {
                Some(p) => config = Some(p),
                None => rest.push(a),
            }
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(p.into());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let path = Path::new(&path).to_path_buf();
    let pairs = parse_config(&io::read_to_string(&path)?, &path)?;
    // argv[0], subcommand, config flags, user flags
    let split = rest.len().min(2);
    let mut out: Vec<OsString> = rest[..split].to_vec();
    out.extend(as_flags(&pairs));
    out.extend(rest[split..].iter().cloned());
    Ok(out)
}

/// Whether the user passed `flag` on the real command line.
pub fn given(args: &[OsString], flag: &str) -> bool {
    let eq = format!("{flag}=");
    args.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&eq)
    })
}
