//! Flat `key = value` config files, spliced into the argument list as flags.

use std::ffi::OsString;
use std::path::Path;

/// `(key, value)` pairs in file order. Keys may use `_` or `-`; blank lines
/// and lines starting with `#` are skipped.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!("line {}: expected key = value", no + 1));
        };
        let key = key.trim().replace('_', "-");
        if key.is_empty() || key.starts_with('-') {
            return Err(format!("line {}: bad key {:?}", no + 1, key));
        }
        if key == "config" {
            return Err(format!(
                "line {}: config files cannot include others",
                no + 1
            ));
        }
        if pairs.iter().any(|(k, _)| *k == key) {
            return Err(format!("line {}: duplicate key {key:?}", no + 1));
        }
        pairs.push((key, value.trim().to_string()));
    }
    Ok(pairs)
}

fn flag_name(arg: &OsString) -> Option<String> {
    let s = arg.to_str()?.strip_prefix("--")?;
    Some(s.split_once('=').map_or(s, |(k, _)| k).to_string())
}

/// Rewrites `argv` so that every key of the `--config` file not given as a
/// flag is inserted right after the subcommand. Arguments without a config
/// file pass through unchanged.
pub fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let mut path = None;
    let mut i = 0;
    while i < argv.len() {
        if let Some(s) = argv[i].to_str() {
            if s == "--config" {
                let p = argv
                    .get(i + 1)
                    .ok_or("--config requires a file path")?
                    .clone();
                path = Some(p);
                break;
            }
            if let Some(p) = s.strip_prefix("--config=") {
                path = Some(OsString::from(p));
                break;
            }
        }
        i += 1;
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let pairs = parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let given: Vec<String> = argv.iter().filter_map(flag_name).collect();
    // argv[0] is the program, argv[1] the subcommand.
    let split = 2.min(argv.len());
    let mut out: Vec<OsString> = argv[..split].to_vec();
    for (k, v) in pairs {
        if !given.contains(&k) {
            out.push(format!("--{k}").into());
            out.push(v.into());
        }
    }
    out.extend_from_slice(&argv[split..]);
    Ok(out)
}
