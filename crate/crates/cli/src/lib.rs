//! Command-line front-end. `run` is the whole program; the binary only
//! forwards `argv` and the exit status.

use std::ffi::OsString;
use std::fmt;
use std::fs;

use clap::{CommandFactory, FromArgMatches};
use serde_json::Value;

pub mod args;
mod commands;

use args::Cli;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub const THREADS_ENV: &str = "VAMCE_THREADS";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<vamce_core::Error> for CliError {
    fn from(e: vamce_core::Error) -> Self {
        use vamce_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Io { .. } | E::Format(_) => CliError::Io(msg),
            E::Domain(_) | E::NonFinite(_) => CliError::Numeric(msg),
            E::Shape(_) | E::Config(_) => CliError::Usage(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn io_error(path: &std::path::Path, e: impl fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Splices the flags of a `--config` file in right after the subcommand so
/// that anything given explicitly later on the command line overrides them.
pub fn expand_config(argv: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let mut path = None;
    let mut iter = argv.iter().skip(2);
    while let Some(a) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            path = iter.next().cloned();
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(OsString::from(p));
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let path = std::path::PathBuf::from(path);
    let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: invalid config JSON: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(CliError::Usage(format!("{}: config must be a flat JSON object", path.display())));
    };
    let mut injected = Vec::new();
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" || flag == "--print-config" {
            return Err(CliError::Usage(format!("{}: key '{key}' is not allowed in a config file", path.display())));
        }
        let scalar = |v: &Value| -> CliResult<String> {
            match v {
                Value::String(s) => Ok(s.clone()),
                Value::Number(n) => Ok(n.to_string()),
                _ => Err(CliError::Usage(format!("{}: key '{key}' must be a string, number, boolean or array", path.display()))),
            }
        };
        match &v {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => injected.push(flag),
            Value::Array(items) => {
                let joined = items.iter().map(&scalar).collect::<CliResult<Vec<_>>>()?.join(",");
                injected.push(format!("{flag}={joined}"));
            }
            other => injected.push(format!("{flag}={}", scalar(other)?)),
        }
    }
    let mut out = argv;
    let at = out.len().min(2);
    out.splice(at..at, injected.into_iter().map(OsString::from));
    Ok(out)
}

/// Worker count from `VAMCE_THREADS`; `None` means rayon's default.
pub fn thread_limit() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) => Ok(None),
            Ok(n) => Ok(Some(n)),
            Err(_) => Err(CliError::Usage(format!("{THREADS_ENV} must be a non-negative integer, got '{v}'"))),
        },
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    match try_run(argv) {
        Ok(()) => 0,
        Err(e) => {
            // clap has already reported its own parse errors.
            if !e.to_string().is_empty() {
                eprintln!("error: {e}");
            }
            e.exit_code()
        }
    }
}

fn try_run(argv: Vec<OsString>) -> CliResult<()> {
    let argv = expand_config(argv)?;
    // Later occurrences of a flag replace earlier ones, which is what lets
    // explicit flags override the spliced-in config values.
    let parser = Cli::command().mut_subcommands(|c| c.args_override_self(true));
    let cli = match parser.try_get_matches_from(argv).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            // --help and --version land here too, with a success code.
            return if code == 0 { Ok(()) } else { Err(CliError::Usage(String::new())) };
        }
    };
    if cli.command.common().print_config {
        let json = serde_json::to_string_pretty(&cli.command).expect("arguments serialize");
        println!("{json}");
        return Ok(());
    }
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_limit()? {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| commands::dispatch(cli.command))
}

#[cfg(test)]
mod tests {
    use super::*;
    use vamce_core::Error;

    #[test]
    fn core_errors_map_to_exit_codes() {
        let io = Error::Io {
            path: "x".into(),
            source: std::io::Error::other("boom"),
        };
        assert_eq!(CliError::from(io).exit_code(), EXIT_IO);
        assert_eq!(CliError::from(Error::Format("f".into())).exit_code(), EXIT_IO);
        assert_eq!(CliError::from(Error::NonFinite("n".into())).exit_code(), EXIT_NUMERIC);
        assert_eq!(CliError::from(Error::Domain("d".into())).exit_code(), EXIT_NUMERIC);
        assert_eq!(CliError::from(Error::Config("c".into())).exit_code(), EXIT_USAGE);
        assert_eq!(CliError::from(Error::Shape("s".into())).exit_code(), EXIT_USAGE);
    }

    #[test]
    fn config_flags_go_before_user_flags() {
        let dir = tempfile::TempDir::new().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"kb": 4, "scalings": [-3, 3], "freeze_gains": false}"#).unwrap();
        let argv: Vec<OsString> = ["vamce", "enhance", "--kb", "9", "--config", cfg.to_str().unwrap()]
            .iter()
            .map(OsString::from)
            .collect();
        let out = expand_config(argv).unwrap();
        let out: Vec<String> = out.iter().map(|s| s.to_string_lossy().into_owned()).collect();
        assert_eq!(&out[..4], &["vamce", "enhance", "--kb=4", "--scalings=-3,3"]);
        assert_eq!(&out[4..6], &["--kb", "9"]);
    }
}
