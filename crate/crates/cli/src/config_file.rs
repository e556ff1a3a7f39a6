//! `--config` support: a flat `key=value` file whose keys are the long
//! flag names (dashes or underscores). Its entries are spliced in right
//! after the subcommand so explicit flags, which come later, win.

use std::ffi::OsString;
use std::path::Path;

const SUBCOMMANDS: [&str; 3] = ["train", "sample", "schedule"];

pub fn expand_args(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let Some(sub) = args.iter().position(|a| SUBCOMMANDS.iter().any(|s| a == s)) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| format!("cannot read config file {}: {e}", Path::new(&path).display()))?;
    let flags = parse(&text)?;
    let mut out = args[..=sub].to_vec();
    out.extend(flags.into_iter().map(OsString::from));
    out.extend_from_slice(&args[sub + 1..]);
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut iter = args.iter();
    while let Some(arg) = iter.next() {
        let s = arg.to_string_lossy();
        if s == "--config" {
            return iter.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

/// Turns the file into flags. `true`/`false` switch boolean flags; empty
/// lines and `#` comments are skipped.
pub fn parse(text: &str) -> Result<Vec<String>, String> {
    let mut flags = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key=value, got `{line}`", n + 1))?;
        let key = key.trim().trim_start_matches('-').replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(format!("config line {}: invalid key", n + 1));
        }
        match value.trim() {
            "true" => flags.push(format!("--{key}")),
            "false" => {}
            v => {
                flags.push(format!("--{key}"));
                flags.push(v.to_string());
            }
        }
    }
    Ok(flags)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_become_flags() {
        let flags = parse("# run\nbatch_size = 32\nconditional=true\ndeeper=false\n\n--seed=4").unwrap();
        assert_eq!(flags, ["--batch-size", "32", "--conditional", "--seed", "4"]);
        assert!(parse("epochs 3").is_err());
    }

    #[test]
    fn entries_precede_explicit_flags() {
        let dir = std::env::temp_dir().join(format!("minidiff-cfg-{}", std::process::id()));
        std::fs::write(&dir, "epochs=3\n").unwrap();
        let args: Vec<OsString> = ["minidiff", "--config", dir.to_str().unwrap(), "train", "--epochs", "5"]
            .iter()
            .map(OsString::from)
            .collect();
        let out = expand_args(args).unwrap();
        std::fs::remove_file(&dir).unwrap();
        let out: Vec<String> = out.iter().map(|a| a.to_string_lossy().into_owned()).collect();
        assert_eq!(&out[3..], ["train", "--epochs", "3", "--epochs", "5"]);
    }
}
